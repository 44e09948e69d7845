"""The synthetic domain pair: matched acoustics, shifted label prior.

Tokens come in confusable pairs whose prototypes sit close together in
feature space.  Source and target domains share the prototypes, the noise
level, and the cluster-level transition structure; they differ only in
the within-pair preference (balanced at the source, 0.92 biased at the
target).  Acoustics alone cannot tell pair members apart reliably, so the
label prior decides, and adapting it is exactly what text-only adaptation
can deliver.
"""

import numpy as np

from mhat import Vocabulary, confusable_pair_domains, gen_corpus
from mhat.data import chain_entropy_rate, corpus_log_loss

vocab = Vocabulary.default(16)
source, target = confusable_pair_domains(vocab, d_x=8, seed=0, noise_sigma=0.3)

print("prototypes shared between domains:", np.array_equal(source.prototypes, target.prototypes))
d01 = np.linalg.norm(source.prototypes[0] - source.prototypes[1])
d02 = np.linalg.norm(source.prototypes[0] - source.prototypes[2])
print(f"distance within pair (w00,w01): {d01:.2f}   across clusters (w00,w02): {d02:.2f}")
print(f"feature noise sigma: {source.noise_sigma}")

ctx = 2
pair = int(np.argmax(source.bigram[ctx, :16].reshape(8, 2).sum(axis=1)))
a, b = 2 * pair, 2 * pair + 1
print(f"\nafter context {vocab.names[ctx]}, the likeliest next pair is ({vocab.names[a]}, {vocab.names[b]}):")
print(f"  source splits it {source.bigram[ctx, a]:.3f} / {source.bigram[ctx, b]:.3f}  (balanced)")
print(f"  target splits it {target.bigram[ctx, a]:.3f} / {target.bigram[ctx, b]:.3f}  (biased)")

print("\nchain entropy rates (nats/event, EOS included):")
print(f"  source {chain_entropy_rate(source):.3f}, target {chain_entropy_rate(target):.3f}")

text = gen_corpus(source, seed=3, n_utts=4000, text_only=True)
n_tokens = sum(len(it.tokens) for it in text.items)
measured = corpus_log_loss(source, text)
print(f"measured log-loss of the true table on {n_tokens} generated tokens: {measured:.3f}")

print("\na few source sentences:")
for it in text.items[:5]:
    print("  " + vocab.text(it.tokens))
tgt_text = gen_corpus(target, seed=3, n_utts=5, text_only=True)
print("a few target sentences (same clusters, different pair members):")
for it in tgt_text.items:
    print("  " + vocab.text(it.tokens))

paired = gen_corpus(source, seed=4, n_utts=3)
print("\npaired utterances carry 1-3 noisy prototype frames per token:")
for it in paired.items:
    print(f"  {it.uid}: {len(it.tokens)} tokens -> {it.features.shape[0]} frames")
