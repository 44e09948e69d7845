"""WER metrics, the experiment pipeline, and the command-line surface.

Progress lines go to stderr; machine-readable outputs go to files, so
stdout stays clean for piping.  Exit codes: 0 success, 1 usage error,
2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import os
import sys
import time
from concurrent import futures
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import data as dat
from .adapt import AdaptReport, IlmaConfig, run_ilma
from .decode import (
    DecodeResult,
    FusionConfig,
    NO_FUSION,
    beam_search,
    format_record,
    parse_record,
)
from .extlm import LmTrainConfig, train_lm
from .losses import perplexity
from .model import ConfigError, EncoderConfig, HatModel, MhatModel, Vocabulary
from .training import TrainConfig, train_asr


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- word error rate -------------------------------------------------------


def wer_counts(ref: Sequence[int], hyp: Sequence[int]) -> tuple[int, int, int]:
    """(substitutions, insertions, deletions) of a minimum-edit alignment.

    Ties prefer substitutions over insert+delete pairs (diagonal moves
    first in the backtrace), then deletions over insertions.
    """
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    move = np.zeros((n + 1, m + 1), dtype=np.int8)  # 0 diag, 1 del, 2 ins
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    move[1:, 0] = 1
    move[0, 1:] = 2
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dele = cost[i - 1, j] + 1
            ins = cost[i, j - 1] + 1
            best = min(diag, dele, ins)
            cost[i, j] = best
            move[i, j] = 0 if diag == best else (1 if dele == best else 2)
    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        mv = move[i, j]
        if mv == 0:
            subs += ref[i - 1] != hyp[j - 1]
            i -= 1
            j -= 1
        elif mv == 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return int(subs), int(ins), int(dels)


@dataclass
class EvalReport:
    subs: int = 0
    ins: int = 0
    dels: int = 0
    n_utts: int = 0
    ref_tokens: int = 0

    def add(self, ref: Sequence[int], hyp: Sequence[int]) -> None:
        s, i, d = wer_counts(ref, hyp)
        self.subs += s
        self.ins += i
        self.dels += d
        self.n_utts += 1
        self.ref_tokens += len(ref)

    @property
    def wer(self) -> float:
        if self.ref_tokens == 0:
            return 0.0
        return 100.0 * (self.subs + self.ins + self.dels) / self.ref_tokens

    def kv_lines(self) -> list[str]:
        return [
            f"wer {self.wer!r}",
            f"substitutions {self.subs}",
            f"insertions {self.ins}",
            f"deletions {self.dels}",
            f"utterances {self.n_utts}",
            f"ref_tokens {self.ref_tokens}",
        ]


def evaluate_pairs(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> EvalReport:
    report = EvalReport()
    for ref, hyp in pairs:
        report.add(ref, hyp)
    return report


# -- corpus decoding ---------------------------------------------------------

_WORKER: dict = {}


def _init_decode_worker(model, beam, fusion):
    _WORKER["model"] = model
    _WORKER["beam"] = beam
    _WORKER["fusion"] = fusion


def _decode_one(item):
    uid, feats = item
    best = beam_search(_WORKER["model"], feats, _WORKER["beam"], _WORKER["fusion"])[0]
    return uid, best


def decode_corpus(
    model, corpus: dat.Corpus, beam: int = 8, fusion: FusionConfig = NO_FUSION, jobs: int = 1
) -> list[tuple[str, DecodeResult]]:
    """Decode every utterance; parallel across utterances, order-stable."""
    items = [(it.uid, it.features) for it in corpus.items]
    if any(f is None for _, f in items):
        raise ConfigError("decoding requires a paired corpus with features")
    if jobs <= 1:
        _init_decode_worker(model, beam, fusion)
        return [_decode_one(it) for it in items]
    with futures.ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_decode_worker, initargs=(model, beam, fusion)
    ) as pool:
        return list(pool.map(_decode_one, items, chunksize=max(1, len(items) // (4 * jobs))))


def evaluate_decodes(corpus: dat.Corpus, hyps: dict[str, Sequence[int]]) -> EvalReport:
    report = EvalReport()
    for it in corpus.items:
        if it.uid not in hyps:
            raise ConfigError(f"no hypothesis for utterance {it.uid}")
        report.add(it.tokens, hyps[it.uid])
    return report


# -- the experiment pipeline -------------------------------------------------

METHODS = ("HAT", "MHAT", "HAT+LM", "MHAT+LM", "MHAT+ILMA", "MHAT+ILMA+LM")


@dataclass
class ExperimentConfig:
    # data
    vocab_size: int = 16
    d_x: int = 8
    sigma: float = 0.3
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 200
    n_adapt_text: int = 5000
    pair_separation: float = 0.65
    center_scale: float = 1.0
    source_member_bias: float = 0.5
    target_member_bias: float = 0.92
    eos_prob: float = 0.12
    concentration: float = 0.1
    # model dims
    d_f: int = 64
    enc_context: int = 1
    enc_layers: int = 2
    joint_dim: int = 32
    label_dim: int = 64
    blank_dim: int = 16
    hat_decoder_dim: int = 64
    # acoustic training
    epochs: int = 8
    batch_size: int = 32
    lr: float = 3e-3
    alpha: float = 0.1
    # external LM
    lm_epochs: int = 20
    lm_lr: float = 5e-3
    lm_batch: int = 64
    # adaptation
    rho: float = 0.5
    ilma_steps: int = 600
    ilma_lr: float = 1e-3
    ilma_batch: int = 32
    # decoding
    beam: int = 4
    lam_ext_grid: tuple[float, ...] = (0.0, 0.2, 0.4, 0.8)
    lam_ilm_grid: tuple[float, ...] = (0.0, 0.2, 0.4)
    jobs: int = 1
    seed: int = 0


@dataclass
class ExperimentData:
    vocab: Vocabulary
    source: dat.DomainSpec
    target: dat.DomainSpec
    src_train: dat.Corpus
    src_dev: dat.Corpus
    src_test: dat.Corpus
    tgt_text: dat.Corpus
    tgt_dev: dat.Corpus
    tgt_test: dat.Corpus


@dataclass
class ExperimentResult:
    wer: dict[str, dict[str, float]]
    reports: dict[str, dict[str, EvalReport]]
    best_lambdas: dict[str, tuple[float, float]]
    ilma_report: AdaptReport
    lm_train_ppl: float
    ilm_source_ppl: float
    ilm_target_ppl: float
    models: dict[str, object] = field(default_factory=dict)
    data: ExperimentData | None = None
    durations: dict[str, float] = field(default_factory=dict)

    def matrix_lines(self) -> list[str]:
        lines = ["method\tsource_wer\ttarget_wer"]
        for method in METHODS:
            row = self.wer[method]
            lines.append(f"{method}\t{row['source']:.3f}\t{row['target']:.3f}")
        return lines


def make_experiment_data(cfg: ExperimentConfig) -> ExperimentData:
    vocab = Vocabulary.default(cfg.vocab_size)
    source, target = dat.confusable_pair_domains(
        vocab,
        cfg.d_x,
        seed=cfg.seed,
        noise_sigma=cfg.sigma,
        pair_separation=cfg.pair_separation,
        center_scale=cfg.center_scale,
        source_member_bias=cfg.source_member_bias,
        target_member_bias=cfg.target_member_bias,
        eos_prob=cfg.eos_prob,
        concentration=cfg.concentration,
    )
    s = cfg.seed
    return ExperimentData(
        vocab=vocab,
        source=source,
        target=target,
        src_train=dat.gen_corpus(source, s + 1, cfg.n_train, "train"),
        src_dev=dat.gen_corpus(source, s + 2, cfg.n_dev, "dev"),
        src_test=dat.gen_corpus(source, s + 3, cfg.n_test, "test"),
        tgt_text=dat.gen_corpus(target, s + 20, cfg.n_adapt_text, "train", text_only=True),
        tgt_dev=dat.gen_corpus(target, s + 21, cfg.n_dev, "dev"),
        tgt_test=dat.gen_corpus(target, s + 22, cfg.n_test, "test"),
    )


def build_mhat(cfg: ExperimentConfig, vocab: Vocabulary) -> MhatModel:
    enc = EncoderConfig(d_x=cfg.d_x, context=cfg.enc_context, layers=cfg.enc_layers, d_f=cfg.d_f)
    return MhatModel(
        vocab, enc, label_dim=cfg.label_dim, blank_dim=cfg.blank_dim,
        joint_dim=cfg.joint_dim, seed=cfg.seed,
    )


def build_hat(cfg: ExperimentConfig, vocab: Vocabulary) -> HatModel:
    enc = EncoderConfig(d_x=cfg.d_x, context=cfg.enc_context, layers=cfg.enc_layers, d_f=cfg.d_f)
    return HatModel(vocab, enc, decoder_dim=cfg.hat_decoder_dim, joint_dim=cfg.joint_dim, seed=cfg.seed)


def _wer_of(model, corpus, cfg, fusion=NO_FUSION) -> EvalReport:
    hyps = {uid: res.tokens for uid, res in decode_corpus(model, corpus, cfg.beam, fusion, cfg.jobs)}
    return evaluate_decodes(corpus, hyps)


def grid_search_lambdas(
    model,
    lm,
    dev: dat.Corpus,
    mode: str,
    cfg: ExperimentConfig,
    log=_log,
) -> tuple[float, float]:
    """Pick (lam_ext, lam_ilm) minimizing dev WER; ties go to smaller weights."""
    ilm_grid = cfg.lam_ilm_grid if mode == "ilme_subtract" else (0.0,)
    best = None
    for le in cfg.lam_ext_grid:
        for li in ilm_grid:
            if le == 0.0 and li > 0.0:
                continue
            fusion = (
                NO_FUSION
                if (le == 0.0 and li == 0.0)
                else FusionConfig(mode=mode, lam_ext=le, lam_ilm=li, lm=lm)
            )
            wer = _wer_of(model, dev, cfg, fusion).wer
            key = (wer, le, li)
            if best is None or key < best:
                best = key
    log(f"grid[{mode}]: best dev WER {best[0]:.3f} at lam_ext={best[1]}, lam_ilm={best[2]}")
    return best[1], best[2]


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None, log=_log) -> ExperimentResult:
    """gen-data -> train HAT/MHAT -> train LM -> ILMA -> decode the method matrix.

    Any stage failure aborts with the stage name; artifacts written by
    completed stages stay on disk.
    """
    state: dict = {"durations": {}}

    def stage(name, fn):
        log(f"stage: {name}")
        start = time.monotonic()
        try:
            fn()
        except Exception as e:
            raise RuntimeError(f"experiment stage {name!r} failed: {e}") from e
        state["durations"][name] = time.monotonic() - start

    def ensure(sub: str) -> str:
        path = os.path.join(out_dir, sub)
        os.makedirs(path, exist_ok=True)
        return path

    def st_data():
        exp = make_experiment_data(cfg)
        state["exp"] = exp
        if out_dir:
            d = ensure("data")
            dat.write_vocab(exp.vocab, os.path.join(d, "vocab.txt"))
            for name, corpus in (
                ("source.train", exp.src_train),
                ("source.dev", exp.src_dev),
                ("source.test", exp.src_test),
                ("target.dev", exp.tgt_dev),
                ("target.test", exp.tgt_test),
            ):
                dat.write_corpus(corpus, os.path.join(d, name))
            dat.write_text_corpus(exp.tgt_text, os.path.join(d, "target.train.txt"))

    def st_hat():
        exp = state["exp"]
        hat = build_hat(cfg, exp.vocab)
        train_asr(hat, exp.src_train.paired(), TrainConfig(
            epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed), log)
        state["hat"] = hat
        if out_dir:
            dat.save_checkpoint(hat, os.path.join(ensure("models"), "hat.ckpt"))

    def st_mhat():
        exp = state["exp"]
        mhat = build_mhat(cfg, exp.vocab)
        train_asr(mhat, exp.src_train.paired(), TrainConfig(
            epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, alpha=cfg.alpha, seed=cfg.seed), log)
        state["mhat"] = mhat
        if out_dir:
            dat.save_checkpoint(mhat, os.path.join(ensure("models"), "mhat.ckpt"))

    def st_lm():
        exp = state["exp"]
        lm, ppl = train_lm(exp.tgt_text, LmTrainConfig(
            epochs=cfg.lm_epochs, lr=cfg.lm_lr, batch_size=cfg.lm_batch,
            embed_dim=cfg.label_dim, seed=cfg.seed))
        log(f"external LM train-set perplexity: {ppl:.3f}")
        state["lm"], state["lm_ppl"] = lm, ppl
        if out_dir:
            dat.save_checkpoint(lm, os.path.join(ensure("models"), "extlm.ckpt"))

    def st_ilma():
        exp = state["exp"]
        adapted = copy.deepcopy(state["mhat"])
        report = run_ilma(
            adapted,
            exp.tgt_text,
            IlmaConfig(rho=cfg.rho, steps=cfg.ilma_steps, lr=cfg.ilma_lr,
                       batch_size=cfg.ilma_batch, seed=cfg.seed),
            heldout_source=exp.src_dev.transcripts(),
            heldout_target=exp.tgt_dev.transcripts(),
        )
        state["mhat_ilma"], state["ilma_report"] = adapted, report
        log(report.render_text())
        if out_dir:
            dat.save_checkpoint(adapted, os.path.join(ensure("models"), "mhat_ilma.ckpt"))
            d = ensure("reports")
            with open(os.path.join(d, "ilma_report.txt"), "w") as f:
                f.write(report.render_text() + "\n")
            with open(os.path.join(d, "ilma_report.kv"), "w") as f:
                f.write("\n".join(report.kv_lines()) + "\n")

    def st_grid():
        exp = state["exp"]
        lams = {}
        lams["HAT+LM"] = grid_search_lambdas(state["hat"], state["lm"], exp.tgt_dev, "ilme_subtract", cfg, log)
        lams["MHAT+LM"] = grid_search_lambdas(state["mhat"], state["lm"], exp.tgt_dev, "ilme_subtract", cfg, log)
        lams["MHAT+ILMA+LM"] = grid_search_lambdas(state["mhat_ilma"], state["lm"], exp.tgt_dev, "shallow", cfg, log)
        state["lams"] = lams

    def _fusion_for(method: str) -> FusionConfig:
        lams = state["lams"]
        if method in ("HAT", "MHAT", "MHAT+ILMA"):
            return NO_FUSION
        le, li = lams[method]
        if le == 0.0 and li == 0.0:
            return NO_FUSION
        mode = "shallow" if method == "MHAT+ILMA+LM" else "ilme_subtract"
        return FusionConfig(mode=mode, lam_ext=le, lam_ilm=li, lm=state["lm"])

    def st_matrix():
        exp = state["exp"]
        models = {
            "HAT": state["hat"],
            "MHAT": state["mhat"],
            "HAT+LM": state["hat"],
            "MHAT+LM": state["mhat"],
            "MHAT+ILMA": state["mhat_ilma"],
            "MHAT+ILMA+LM": state["mhat_ilma"],
        }
        wer: dict[str, dict[str, float]] = {}
        reports: dict[str, dict[str, EvalReport]] = {}
        for method in METHODS:
            fusion = _fusion_for(method)
            wer[method], reports[method] = {}, {}
            for domain, corpus in (("source", exp.src_test), ("target", exp.tgt_test)):
                decoded = decode_corpus(models[method], corpus, cfg.beam, fusion, cfg.jobs)
                if out_dir:
                    d = ensure("decodes")
                    fname = method.replace("+", "_").replace(" ", "") + f"__{domain}.tsv"
                    with open(os.path.join(d, fname), "w") as f:
                        for uid, res in decoded:
                            f.write(format_record(uid, res, exp.vocab) + "\n")
                rep = evaluate_decodes(corpus, {uid: r.tokens for uid, r in decoded})
                wer[method][domain] = rep.wer
                reports[method][domain] = rep
                log(f"{method} [{domain}]: WER {rep.wer:.3f}")
        state["wer"], state["reports"] = wer, reports

    def st_report():
        exp = state["exp"]
        result = ExperimentResult(
            wer=state["wer"],
            reports=state["reports"],
            best_lambdas=state["lams"],
            ilma_report=state["ilma_report"],
            lm_train_ppl=state["lm_ppl"],
            ilm_source_ppl=perplexity(state["mhat"], exp.src_dev.transcripts()),
            ilm_target_ppl=perplexity(state["mhat"], exp.tgt_dev.transcripts()),
            models={
                "hat": state["hat"],
                "mhat": state["mhat"],
                "mhat_ilma": state["mhat_ilma"],
                "lm": state["lm"],
            },
            data=exp,
            durations=dict(state["durations"]),
        )
        state["result"] = result
        if out_dir:
            d = ensure("reports")
            with open(os.path.join(d, "wer_matrix.tsv"), "w") as f:
                f.write("\n".join(result.matrix_lines()) + "\n")

    stage("gen-data", st_data)
    stage("train-hat", st_hat)
    stage("train-mhat", st_mhat)
    stage("train-lm", st_lm)
    stage("ilma", st_ilma)
    stage("grid-search", st_grid)
    stage("decode-matrix", st_matrix)
    stage("report", st_report)
    return state["result"]


# -- CLI ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def read_kv_config(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}: expected key=value, got {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value file overriding flag defaults")
    p.add_argument("--out-dir", default=".", help="artifact directory")


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="mhat", description="desk-scale modular transducer toolkit")
    subs = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    def sub(name: str, **kw) -> argparse.ArgumentParser:
        p = subs.add_parser(name, **kw)
        _add_common(p)
        registry[name] = p
        return p

    p = sub("gen-data", help="generate the synthetic domain-shift dataset")
    p.add_argument("--vocab-size", type=int, default=16)
    p.add_argument("--d-x", type=int, default=8)
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-dev", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--n-adapt-text", type=int, default=5000)
    p.set_defaults(func=cmd_gen_data)

    p = sub("train", help="train a HAT or MHAT on a paired corpus")
    p.add_argument("--data", required=True, help="corpus manifest")
    p.add_argument("--vocab", required=True, help="vocabulary file")
    p.add_argument("--model", choices=("mhat", "hat"), default="mhat")
    p.add_argument("--alpha", type=float, default=0.1, help="internal-LM loss weight (mhat)")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--optimizer", choices=("sgd", "momentum", "adam"), default="adam")
    p.add_argument("--d-f", type=int, default=64)
    p.add_argument("--enc-context", type=int, default=1)
    p.add_argument("--enc-layers", type=int, default=2)
    p.add_argument("--joint-dim", type=int, default=32)
    p.add_argument("--label-dim", type=int, default=64)
    p.add_argument("--blank-dim", type=int, default=16)
    p.add_argument("--decoder-dim", type=int, default=64, help="HAT decoder dim")
    p.set_defaults(func=cmd_train)

    p = sub("train-lm", help="train the external LM on text")
    p.add_argument("--text", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--embed-dim", type=int, default=64)
    p.set_defaults(func=cmd_train_lm)

    p = sub("adapt", help="internal-LM adaptation on text")
    p.add_argument("--ckpt", required=True, help="trained MHAT checkpoint")
    p.add_argument("--text", required=True, help="adaptation text")
    p.add_argument("--vocab", required=True)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--heldout-source", help="held-out source text for the report")
    p.add_argument("--heldout-target", help="held-out target text for the report")
    p.set_defaults(func=cmd_adapt)

    p = sub("decode", help="beam-search decode a paired corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--fusion", choices=("none", "shallow", "ilme_subtract"), default="none")
    p.add_argument("--lm", help="external LM checkpoint (fusion modes)")
    p.add_argument("--lam-ext", type=float, default=0.0)
    p.add_argument("--lam-ilm", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_decode)

    p = sub("eval", help="score decodes against references")
    p.add_argument("--ref", required=True, help="corpus manifest or text file")
    p.add_argument("--vocab", required=True)
    p.add_argument("--hyp", required=True, help="decode records (tsv)")
    p.set_defaults(func=cmd_eval)

    p = sub("experiment", help="full pipeline: data, training, ILMA, fusion matrix")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    return parser, registry


def _write_resolved_config(args) -> None:
    lines = [
        f"{k} {v}"
        for k, v in sorted(vars(args).items())
        if k != "func" and v is not None
    ]
    with open(os.path.join(args.out_dir, "resolved-config.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def _read_refs(path: str, vocab: Vocabulary) -> dat.Corpus:
    with open(path) as f:
        first = f.readline()
    if first.startswith("format mhat-corpus-v1"):
        return dat.read_corpus(path, vocab)
    return dat.read_text_corpus(path, vocab)


def cmd_gen_data(args) -> None:
    cfg = ExperimentConfig(
        vocab_size=args.vocab_size, d_x=args.d_x, sigma=args.sigma,
        n_train=args.n_train, n_dev=args.n_dev, n_test=args.n_test,
        n_adapt_text=args.n_adapt_text, seed=args.seed,
    )
    exp = make_experiment_data(cfg)
    out = args.out_dir
    dat.write_vocab(exp.vocab, os.path.join(out, "vocab.txt"))
    for name, corpus in (
        ("source.train", exp.src_train),
        ("source.dev", exp.src_dev),
        ("source.test", exp.src_test),
        ("target.dev", exp.tgt_dev),
        ("target.test", exp.tgt_test),
    ):
        dat.write_corpus(corpus, os.path.join(out, name))
    dat.write_text_corpus(exp.tgt_text, os.path.join(out, "target.train.txt"))
    dat.write_text_corpus(exp.src_dev, os.path.join(out, "source.dev.txt"))
    dat.write_text_corpus(exp.tgt_dev, os.path.join(out, "target.dev.txt"))
    _log(f"wrote dataset under {out}")


def cmd_train(args) -> None:
    vocab = dat.read_vocab(args.vocab)
    corpus = dat.read_corpus(args.data, vocab)
    enc = EncoderConfig(d_x=corpus.items[0].features.shape[1], context=args.enc_context,
                        layers=args.enc_layers, d_f=args.d_f)
    if args.model == "mhat":
        model = MhatModel(vocab, enc, label_dim=args.label_dim, blank_dim=args.blank_dim,
                          joint_dim=args.joint_dim, seed=args.seed)
        alpha = args.alpha
    else:
        model = HatModel(vocab, enc, decoder_dim=args.decoder_dim, joint_dim=args.joint_dim,
                         seed=args.seed)
        alpha = 0.0
    curve = train_asr(model, corpus.paired(), TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        optimizer=args.optimizer, alpha=alpha, seed=args.seed), _log)
    out = os.path.join(args.out_dir, f"{args.model}.ckpt")
    dat.save_checkpoint(model, out)
    with open(os.path.join(args.out_dir, "train_log.txt"), "w") as f:
        for i, loss in enumerate(curve, start=1):
            f.write(f"epoch {i} loss_per_utt {loss!r}\n")
    _log(f"saved {out}")


def cmd_train_lm(args) -> None:
    vocab = dat.read_vocab(args.vocab)
    corpus = dat.read_text_corpus(args.text, vocab)
    lm, ppl = train_lm(corpus, LmTrainConfig(
        embed_dim=args.embed_dim, epochs=args.epochs, batch_size=args.batch_size,
        lr=args.lr, seed=args.seed))
    out = os.path.join(args.out_dir, "extlm.ckpt")
    dat.save_checkpoint(lm, out)
    with open(os.path.join(args.out_dir, "lm_report.kv"), "w") as f:
        f.write(f"train_ppl {ppl!r}\n")
    _log(f"saved {out} (train-set perplexity {ppl:.3f})")


def cmd_adapt(args) -> None:
    vocab = dat.read_vocab(args.vocab)
    model = dat.load_checkpoint(args.ckpt, expect="mhat")
    corpus = dat.read_text_corpus(args.text, vocab)
    heldout_src = (
        dat.read_text_corpus(args.heldout_source, vocab).transcripts()
        if args.heldout_source else None
    )
    heldout_tgt = (
        dat.read_text_corpus(args.heldout_target, vocab).transcripts()
        if args.heldout_target else None
    )
    report = run_ilma(model, corpus, IlmaConfig(
        rho=args.rho, steps=args.steps, lr=args.lr, batch_size=args.batch_size,
        seed=args.seed), heldout_src, heldout_tgt)
    out = os.path.join(args.out_dir, "mhat_ilma.ckpt")
    dat.save_checkpoint(model, out)
    with open(os.path.join(args.out_dir, "ilma_report.txt"), "w") as f:
        f.write(report.render_text() + "\n")
    with open(os.path.join(args.out_dir, "ilma_report.kv"), "w") as f:
        f.write("\n".join(report.kv_lines()) + "\n")
    _log(report.render_text())
    _log(f"saved {out}")


def cmd_decode(args) -> None:
    vocab = dat.read_vocab(args.vocab)
    model = dat.load_checkpoint(args.ckpt, expect="asr")
    corpus = dat.read_corpus(args.data, vocab)
    if args.fusion == "none":
        fusion = NO_FUSION
    else:
        if not args.lm:
            raise ConfigError(f"fusion mode {args.fusion!r} requires --lm")
        lm = dat.load_checkpoint(args.lm, expect="lm")
        fusion = FusionConfig(mode=args.fusion, lam_ext=args.lam_ext,
                              lam_ilm=args.lam_ilm, lm=lm)
    decoded = decode_corpus(model, corpus, args.beam, fusion, args.jobs)
    out = os.path.join(args.out_dir, "decodes.tsv")
    with open(out, "w") as f:
        for uid, res in decoded:
            f.write(format_record(uid, res, vocab) + "\n")
    _log(f"decoded {len(decoded)} utterances -> {out}")


def cmd_eval(args) -> None:
    vocab = dat.read_vocab(args.vocab)
    refs = _read_refs(args.ref, vocab)
    hyps: dict[str, tuple[int, ...]] = {}
    with open(args.hyp) as f:
        for line in f:
            if line.strip():
                uid, ids = parse_record(line)
                hyps[uid] = ids
    report = evaluate_decodes(refs, hyps)
    out = os.path.join(args.out_dir, "eval.kv")
    with open(out, "w") as f:
        f.write("\n".join(report.kv_lines()) + "\n")
    _log(f"WER {report.wer:.3f}% "
         f"(S={report.subs} I={report.ins} D={report.dels} over {report.ref_tokens} ref tokens)")


def cmd_experiment(args) -> None:
    cfg = ExperimentConfig(alpha=args.alpha, rho=args.rho, epochs=args.epochs,
                           beam=args.beam, jobs=args.jobs, seed=args.seed)
    result = run_experiment(cfg, args.out_dir, _log)
    for line in result.matrix_lines():
        _log(line)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)

    parser, registry = build_parser()
    if known.config:
        try:
            overrides = read_kv_config(known.config)
        except (OSError, ConfigError) as e:
            _log(f"error: {e}")
            return 1
        for p in registry.values():
            defaults = {}
            for action in p._actions:
                if action.dest in overrides:
                    value = overrides[action.dest]
                    if isinstance(action.const, bool):
                        defaults[action.dest] = value.lower() in ("1", "true", "yes")
                    elif action.type is not None:
                        defaults[action.dest] = action.type(value)
                    else:
                        defaults[action.dest] = value
            if defaults:
                p.set_defaults(**defaults)

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        _write_resolved_config(args)
        args.func(args)
        return 0
    except Exception as e:
        _log(f"error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
