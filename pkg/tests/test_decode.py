import itertools

import numpy as np
import pytest

from conftest import small_hat, small_mhat
from mhat.decode import (
    DecodeResult,
    FusionConfig,
    NO_FUSION,
    beam_search,
    format_record,
    greedy_decode,
    parse_record,
    score_sequence,
)
from mhat.extlm import ExternalLm
from mhat.model import ConfigError, Vocabulary


def exhaustive_best(model, X, fusion, max_u=4):
    """Argmax over all label sequences up to max_u, same tie-break as the beam."""
    v = model.vocab.size
    best = None
    for u in range(max_u + 1):
        for y in itertools.product(range(v), repeat=u):
            res = score_sequence(model, X, y, fusion)
            key = (-res.combined, len(y), y)
            if best is None or key < best[0]:
                best = (key, res)
    return best[1]


def fusion_cases(lm):
    return [
        NO_FUSION,
        FusionConfig(mode="shallow", lam_ext=0.3, lm=lm),
        FusionConfig(mode="ilme_subtract", lam_ext=0.3, lam_ilm=0.2, lm=lm),
    ]


class TestFusionConfig:
    def test_mode_none_rejects_weights_and_lm(self):
        with pytest.raises(ConfigError):
            FusionConfig(mode="none", lam_ext=0.1)
        with pytest.raises(ConfigError):
            FusionConfig(mode="none", lm=ExternalLm(Vocabulary.default(4)))

    def test_fusion_requires_lm(self):
        with pytest.raises(ConfigError):
            FusionConfig(mode="shallow", lam_ext=0.3)

    def test_negative_weights_rejected(self):
        lm = ExternalLm(Vocabulary.default(4))
        with pytest.raises(ConfigError):
            FusionConfig(mode="shallow", lam_ext=-0.1, lm=lm)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            FusionConfig(mode="deep")

    def test_vocab_mismatch_rejected(self, mhat_small, rng):
        lm = ExternalLm(Vocabulary.default(6), embed_dim=8)
        fusion = FusionConfig(mode="shallow", lam_ext=0.3, lm=lm)
        with pytest.raises(ConfigError, match="vocabulary"):
            beam_search(mhat_small, rng.standard_normal((2, 3)), fusion=fusion)

    def test_shallow_ignores_lam_ilm(self):
        lm = ExternalLm(Vocabulary.default(4))
        f = FusionConfig(mode="shallow", lam_ext=0.3, lam_ilm=0.7, lm=lm)
        assert f.effective_lam_ilm == 0.0


class TestDegenerateFusion:
    def test_zero_weight_shallow_equals_none(self, mhat_small, rng):
        lm = ExternalLm(mhat_small.vocab, embed_dim=8, seed=2)
        X = rng.standard_normal((3, 3))
        base = beam_search(mhat_small, X, beam_width=8)
        fused = beam_search(
            mhat_small, X, beam_width=8, fusion=FusionConfig(mode="shallow", lam_ext=0.0, lm=lm)
        )
        assert [r.tokens for r in base] == [r.tokens for r in fused]
        for a, b in zip(base, fused):
            assert a.model_lp == pytest.approx(b.model_lp, abs=1e-12)
            assert a.combined == pytest.approx(b.combined, abs=1e-12)

    def test_zero_weight_ilme_equals_none(self, mhat_small, rng):
        lm = ExternalLm(mhat_small.vocab, embed_dim=8, seed=2)
        X = rng.standard_normal((3, 3))
        base = beam_search(mhat_small, X, beam_width=8)
        fused = beam_search(
            mhat_small,
            X,
            beam_width=8,
            fusion=FusionConfig(mode="ilme_subtract", lam_ext=0.0, lam_ilm=0.0, lm=lm),
        )
        assert [r.tokens for r in base] == [r.tokens for r in fused]
        assert base[0].combined == pytest.approx(fused[0].combined, abs=1e-12)


class TestExhaustiveOracle:
    @pytest.mark.parametrize("kind", ["mhat", "hat"])
    def test_saturating_beam_finds_argmax(self, kind):
        rng = np.random.default_rng(11)
        make = small_mhat if kind == "mhat" else small_hat
        for trial in range(20):
            model = make(vocab_size=3, seed=int(rng.integers(10000)))
            lm = ExternalLm(model.vocab, embed_dim=6, seed=int(rng.integers(10000)))
            t_len = int(rng.integers(1, 4))
            X = rng.standard_normal((t_len, 3))
            fusion = fusion_cases(lm)[trial % 3]
            best = exhaustive_best(model, X, fusion)
            top = beam_search(model, X, beam_width=96, fusion=fusion)[0]
            assert top.tokens == best.tokens

    def test_winner_breakdown_matches_score_sequence(self, mhat_small, rng):
        lm = ExternalLm(mhat_small.vocab, embed_dim=8, seed=4)
        fusion = FusionConfig(mode="ilme_subtract", lam_ext=0.4, lam_ilm=0.2, lm=lm)
        X = rng.standard_normal((3, 3))
        top = beam_search(mhat_small, X, beam_width=128, fusion=fusion)[0]
        ref = score_sequence(mhat_small, X, top.tokens, fusion)
        assert top.model_lp == pytest.approx(ref.model_lp, abs=1e-6)
        assert top.ext_lp == pytest.approx(ref.ext_lp, abs=1e-6)
        assert top.ilm_lp == pytest.approx(ref.ilm_lp, abs=1e-6)
        assert top.combined == pytest.approx(ref.combined, abs=1e-6)


class TestGreedy:
    def test_equals_beam_width_one(self, mhat_small, rng):
        X = rng.standard_normal((4, 3))
        assert greedy_decode(mhat_small, X) == beam_search(mhat_small, X, beam_width=1)[0].tokens

    def test_saturated_blank_gives_empty(self, mhat_small, rng):
        mhat_small.params["joint.v_bias"].data = np.asarray(50.0)
        assert greedy_decode(mhat_small, rng.standard_normal((5, 3))) == ()

    def test_deterministic(self, mhat_small, rng):
        X = rng.standard_normal((4, 3))
        assert greedy_decode(mhat_small, X) == greedy_decode(mhat_small, X)


class TestBeamProperties:
    def test_monotone_in_beam_width(self, rng):
        for trial in range(10):
            model = small_mhat(vocab_size=3, seed=trial)
            X = np.random.default_rng(trial).standard_normal((4, 3))
            scores = [
                beam_search(model, X, beam_width=b)[0].combined for b in (1, 2, 4, 8, 16)
            ]
            for a, b in zip(scores, scores[1:]):
                assert b >= a - 1e-12

    def test_identical_runs_identical_results(self, hat_small, rng):
        X = rng.standard_normal((4, 3))
        lm = ExternalLm(hat_small.vocab, embed_dim=8, seed=0)
        fusion = FusionConfig(mode="shallow", lam_ext=0.3, lm=lm)
        a = beam_search(hat_small, X, beam_width=4, fusion=fusion)
        b = beam_search(hat_small, X, beam_width=4, fusion=fusion)
        assert a == b

    def test_beam_width_validation(self, mhat_small, rng):
        with pytest.raises(ConfigError):
            beam_search(mhat_small, rng.standard_normal((2, 3)), beam_width=0)

    def test_label_cap_bounds_output_length(self, mhat_small, rng):
        # force label-greedy behavior: blank never attractive
        mhat_small.params["joint.v_bias"].data = np.asarray(-50.0)
        X = rng.standard_normal((2, 3))
        top = beam_search(mhat_small, X, beam_width=2, max_labels_per_frame=3)[0]
        assert len(top.tokens) <= 2 * 3


class TestScoreSequence:
    def test_no_fusion_total_is_lattice_marginal(self, mhat_small, rng):
        from mhat.lattice import forward_log_prob

        X = rng.standard_normal((3, 3))
        y = [1, 0]
        res = score_sequence(mhat_small, X, y)
        assert res.combined == res.model_lp
        assert res.model_lp == pytest.approx(float(forward_log_prob(mhat_small, X, y).data), abs=1e-12)

    def test_affine_in_weights(self, mhat_small, rng):
        lm = ExternalLm(mhat_small.vocab, embed_dim=8, seed=1)
        X = rng.standard_normal((3, 3))
        y = [2, 1]
        base = score_sequence(mhat_small, X, y, FusionConfig(mode="ilme_subtract", lam_ext=0.0, lam_ilm=0.0, lm=lm))
        for le, li in ((0.2, 0.0), (0.5, 0.3), (1.0, 1.0)):
            res = score_sequence(mhat_small, X, y, FusionConfig(mode="ilme_subtract", lam_ext=le, lam_ilm=li, lm=lm))
            assert res.combined == pytest.approx(
                base.model_lp + le * base.ext_lp - li * base.ilm_lp, abs=1e-12
            )

    def test_hat_ilm_component_uses_zero_acoustics_estimate(self, hat_small, rng):
        from mhat.decode import ilm_sequence_log_prob

        y = [1, 2]
        manual = 0.0
        for u in range(len(y)):
            row = hat_small.hat_ilm_log_probs(hat_small.decode_state(y[:u])).data
            manual += row[y[u]]
        assert ilm_sequence_log_prob(hat_small, y) == pytest.approx(manual, abs=1e-12)


class TestRecords:
    def test_roundtrip(self, mhat_small):
        res = DecodeResult(tokens=(1, 3), model_lp=-2.5, ext_lp=-1.25, ilm_lp=-0.5, combined=-2.5)
        line = format_record("dev-00001", res, mhat_small.vocab)
        cols = line.split("\t")
        assert len(cols) == 6
        assert cols[2] == "w1 w3"
        uid, ids = parse_record(line)
        assert uid == "dev-00001" and ids == (1, 3)

    def test_empty_hypothesis(self, mhat_small):
        res = DecodeResult(tokens=(), model_lp=-1.0, ext_lp=0.0, ilm_lp=0.0, combined=-1.0)
        uid, ids = parse_record(format_record("u", res, mhat_small.vocab))
        assert ids == ()
