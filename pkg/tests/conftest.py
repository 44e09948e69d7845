import numpy as np
import pytest

from mhat.model import EncoderConfig, HatModel, MhatModel, Vocabulary


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def small_mhat(vocab_size=4, d_x=3, d_f=8, label_dim=8, blank_dim=4, joint_dim=6, seed=1):
    vocab = Vocabulary.default(vocab_size)
    return MhatModel(
        vocab,
        EncoderConfig(d_x=d_x, d_f=d_f),
        label_dim=label_dim,
        blank_dim=blank_dim,
        joint_dim=joint_dim,
        seed=seed,
    )


def small_hat(vocab_size=4, d_x=3, d_f=8, decoder_dim=8, joint_dim=6, seed=1):
    vocab = Vocabulary.default(vocab_size)
    return HatModel(
        vocab, EncoderConfig(d_x=d_x, d_f=d_f), decoder_dim=decoder_dim, joint_dim=joint_dim, seed=seed
    )


@pytest.fixture
def mhat_small():
    return small_mhat()


@pytest.fixture
def hat_small():
    return small_hat()


def random_utterance(rng, t_len, d_x=3, u_len=2, vocab_size=4):
    X = rng.standard_normal((t_len, d_x))
    y = [int(i) for i in rng.integers(0, vocab_size, size=u_len)]
    return X, y
