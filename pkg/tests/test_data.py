import numpy as np
import pytest

from conftest import small_hat, small_mhat
from mhat.data import (
    CheckpointError,
    DomainSpec,
    chain_entropy_rate,
    confusable_pair_domains,
    corpus_log_loss,
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
from mhat.extlm import ExternalLm
from mhat.model import ConfigError, VocabError, Vocabulary


def point_mass_spec():
    # start -> A, A -> B, B -> EOS
    vocab = Vocabulary.default(2)
    bigram = np.zeros((3, 3))
    bigram[2, 0] = 1.0  # start row emits token 0
    bigram[0, 1] = 1.0
    bigram[1, 2] = 1.0  # EOS
    protos = np.array([[0.0, 1.0], [1.0, 0.0]])
    return DomainSpec(vocab, bigram, protos, noise_sigma=0.5)


class TestDomainSpec:
    def test_point_mass_chain(self):
        corpus = gen_corpus(point_mass_spec(), seed=1, n_utts=20)
        for it in corpus.items:
            assert it.tokens == (0, 1)

    def test_zero_sigma_frames_equal_prototypes(self):
        spec = point_mass_spec()
        spec = DomainSpec(spec.vocab, spec.bigram, spec.prototypes, noise_sigma=0.0)
        corpus = gen_corpus(spec, seed=2, n_utts=5)
        for it in corpus.items:
            for t, row in enumerate(it.features):
                assert np.array_equal(row, spec.prototypes[it.tokens[0]]) or np.array_equal(
                    row, spec.prototypes[it.tokens[1]]
                )

    def test_same_seed_byte_identical(self):
        spec = point_mass_spec()
        a = gen_corpus(spec, seed=3, n_utts=10)
        b = gen_corpus(spec, seed=3, n_utts=10)
        for x, y in zip(a.items, b.items):
            assert x.tokens == y.tokens
            assert x.features.tobytes() == y.features.tobytes()

    def test_row_sum_validation(self):
        vocab = Vocabulary.default(2)
        bad = np.full((3, 3), 0.4)
        with pytest.raises(ConfigError, match="sum to 1"):
            DomainSpec(vocab, bad, np.eye(2), noise_sigma=0.1)

    def test_identical_prototypes_rejected(self):
        vocab = Vocabulary.default(2)
        bigram = np.full((3, 3), 1.0 / 3)
        with pytest.raises(ConfigError, match="prototypes"):
            DomainSpec(vocab, bigram, np.ones((2, 2)), noise_sigma=0.1)

    def test_shift_pair_shares_acoustics(self):
        vocab = Vocabulary.default(8)
        src, tgt = confusable_pair_domains(vocab, d_x=4, seed=0)
        assert np.array_equal(src.prototypes, tgt.prototypes)
        assert src.noise_sigma == tgt.noise_sigma
        assert not np.array_equal(src.bigram, tgt.bigram)
        np.testing.assert_allclose(src.bigram.sum(axis=1), 1.0, atol=1e-12)
        # cluster-level structure is shared: pair-mass equal in both tables
        for row in range(9):
            for pair in range(4):
                s = src.bigram[row, 2 * pair] + src.bigram[row, 2 * pair + 1]
                t = tgt.bigram[row, 2 * pair] + tgt.bigram[row, 2 * pair + 1]
                assert s == pytest.approx(t, abs=1e-12)

    def test_odd_vocab_rejected(self):
        with pytest.raises(ConfigError):
            confusable_pair_domains(Vocabulary.default(5), d_x=4, seed=0)

    def test_entropy_rate_matches_measured_log_loss(self):
        vocab = Vocabulary.default(6)
        rng = np.random.default_rng(9)
        bigram = rng.dirichlet(np.ones(7) * 2.0, size=7)
        bigram[6, 6] = 0.0  # start row never emits EOS directly
        bigram[6] /= bigram[6].sum()
        spec = DomainSpec(vocab, bigram, rng.standard_normal((6, 3)), noise_sigma=0.2)
        corpus = gen_corpus(spec, seed=4, n_utts=4000, text_only=True)
        n_tokens = sum(len(it.tokens) for it in corpus.items)
        assert n_tokens >= 10_000
        measured = corpus_log_loss(spec, corpus)
        expected = chain_entropy_rate(spec)
        assert abs(measured - expected) <= 0.03 * expected


class TestTextCorpusIO:
    def test_roundtrip(self, tmp_path):
        spec = point_mass_spec()
        corpus = gen_corpus(spec, seed=5, n_utts=8, text_only=True)
        path = tmp_path / "text.txt"
        write_text_corpus(corpus, str(path))
        back = read_text_corpus(str(path), spec.vocab)
        assert [it.tokens for it in back.items] == [it.tokens for it in corpus.items]

    def test_empty_file_is_valid(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("")
        corpus = read_text_corpus(str(path), Vocabulary.default(4))
        assert corpus.items == ()

    def test_unknown_token_reports_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("w0 w1\nw0 nope\n")
        with pytest.raises(VocabError, match=r":2"):
            read_text_corpus(str(path), Vocabulary.default(2))

    def test_vocab_file_roundtrip(self, tmp_path):
        vocab = Vocabulary.default(5)
        write_vocab(vocab, str(tmp_path / "v.txt"))
        assert read_vocab(str(tmp_path / "v.txt")) == vocab


class TestPairedCorpusIO:
    def test_roundtrip_and_stable_bytes(self, tmp_path):
        spec = point_mass_spec()
        corpus = gen_corpus(spec, seed=6, n_utts=6)
        p1 = tmp_path / "c1"
        write_corpus(corpus, str(p1))
        back = read_corpus(str(p1), spec.vocab)
        assert [it.tokens for it in back.items] == [it.tokens for it in corpus.items]
        assert [it.uid for it in back.items] == [it.uid for it in corpus.items]
        p2 = tmp_path / "c2"
        write_corpus(back, str(p2))
        assert (tmp_path / "c1.feats").read_bytes() == (tmp_path / "c2.feats").read_bytes()

    def test_vocab_hash_checked(self, tmp_path):
        spec = point_mass_spec()
        corpus = gen_corpus(spec, seed=6, n_utts=2)
        write_corpus(corpus, str(tmp_path / "c"))
        with pytest.raises(ConfigError, match="hash"):
            read_corpus(str(tmp_path / "c"), Vocabulary.default(3))


class TestCheckpoints:
    @pytest.mark.parametrize("kind", ["mhat", "hat", "lm"])
    def test_save_load_save_identical_bytes(self, tmp_path, kind):
        if kind == "mhat":
            obj = small_mhat(seed=3)
        elif kind == "hat":
            obj = small_hat(seed=3)
        else:
            obj = ExternalLm(Vocabulary.default(4), embed_dim=8, seed=3)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(obj, str(p1))
        again = load_checkpoint(str(p1))
        save_checkpoint(again, str(p2))
        assert p1.read_bytes() == p2.read_bytes()
        assert (tmp_path / "a.ckpt.bin").read_bytes() == (tmp_path / "b.ckpt.bin").read_bytes()
        assert again.kind == obj.kind
        assert again.vocab == obj.vocab

    def test_trained_alpha_survives(self, tmp_path):
        m = small_mhat()
        m.trained_alpha = 0.1
        save_checkpoint(m, str(tmp_path / "m.ckpt"))
        assert load_checkpoint(str(tmp_path / "m.ckpt")).trained_alpha == 0.1

    def test_truncated_blob(self, tmp_path):
        m = small_mhat()
        path = tmp_path / "m.ckpt"
        save_checkpoint(m, str(path))
        blob = (tmp_path / "m.ckpt.bin").read_bytes()
        (tmp_path / "m.ckpt.bin").write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated at tensor"):
            load_checkpoint(str(path))

    def test_kind_mismatch(self, tmp_path):
        lm = ExternalLm(Vocabulary.default(4), embed_dim=8)
        save_checkpoint(lm, str(tmp_path / "lm.ckpt"))
        with pytest.raises(CheckpointError, match="kind mismatch"):
            load_checkpoint(str(tmp_path / "lm.ckpt"), expect="asr")
        assert load_checkpoint(str(tmp_path / "lm.ckpt"), expect="lm").kind == "lm"

    def test_shape_mismatch_names_tensor(self, tmp_path):
        m = small_mhat()
        path = tmp_path / "m.ckpt"
        save_checkpoint(m, str(path))
        text = path.read_text().replace("am_proj.weight encoder 4,8", "am_proj.weight encoder 4,9")
        path.write_text(text)
        with pytest.raises(CheckpointError, match="am_proj.weight"):
            load_checkpoint(str(path))

    def test_tampered_vocab_hash(self, tmp_path):
        m = small_mhat()
        path = tmp_path / "m.ckpt"
        save_checkpoint(m, str(path))
        text = path.read_text().replace("token.0 w0", "token.0 q0")
        path.write_text(text)
        with pytest.raises(CheckpointError, match="hash"):
            load_checkpoint(str(path))

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk"
        path.write_text("hello\n")
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))
