"""Training a small MHAT and decoding with score breakdowns.

A reduced setup (800 utterances, a few epochs) is enough to watch the
loss fall, decode with greedy and beam search, and inspect the per-
hypothesis score components that fusion works with.
"""

from mhat import Vocabulary, beam_search, gen_corpus, greedy_decode, score_sequence
from mhat.data import confusable_pair_domains
from mhat.evalcli import ExperimentConfig, build_mhat, decode_corpus, evaluate_decodes
from mhat.training import TrainConfig, train_asr

cfg = ExperimentConfig(n_train=800, n_dev=50, n_test=50, epochs=6)
vocab = Vocabulary.default(cfg.vocab_size)
source, _ = confusable_pair_domains(vocab, cfg.d_x, seed=cfg.seed, noise_sigma=cfg.sigma)
train = gen_corpus(source, cfg.seed + 1, cfg.n_train, "train")
test = gen_corpus(source, cfg.seed + 3, cfg.n_test, "test")

model = build_mhat(cfg, vocab)
curve = train_asr(
    model,
    train.paired(),
    TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, alpha=cfg.alpha, seed=0),
    log=print,
)

decoded = decode_corpus(model, test, beam=4)
report = evaluate_decodes(test, {uid: r.tokens for uid, r in decoded})
print(f"\ntest WER {report.wer:.2f}%  (S={report.subs} I={report.ins} D={report.dels})")

utt = test.items[0]
print(f"\nutterance {utt.uid}: reference = {vocab.text(utt.tokens)}")
print("greedy :", vocab.text(greedy_decode(model, utt.features)))
for rank, hyp in enumerate(beam_search(model, utt.features, beam_width=4)[:3], start=1):
    print(
        f"beam #{rank}: {vocab.text(hyp.tokens) or '<empty>':30s} "
        f"model {hyp.model_lp:8.3f}  ilm {hyp.ilm_lp:8.3f}"
    )

ref_score = score_sequence(model, utt.features, utt.tokens)
print(f"reference sequence scored by the full lattice: {ref_score.model_lp:.3f}")
