"""Hash-scheduled noise levels, majority-vote analytics and the disclosure Monte-Carlo."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rfmask.protocol import (DEFAULT_LEVELS, DisclosureScenario, DisclosureSchedule, MajorityVotingAnalysis,
                             MissingModelError, binomial_pmf, majority_vote, noise_level_at, p_succ, psucc_curves,
                             simulate_disclosure, vote_monte_carlo)

SEED = b"shared-secret"
N_SLOTS = 60_000
AVALANCHE_SLOTS = 10_000
N_DEV = 10


def _sched(seed=SEED, m=6, **kw):
    levels = DEFAULT_LEVELS if m == 6 else tuple(0.01 * k for k in range(m))
    return DisclosureSchedule(seed, level_count=m, level_map=levels, **kw)


class TestSchedule:
    def test_deterministic(self):
        a, b = _sched(), _sched()
        assert [noise_level_at(a, t) for t in range(500)] == [noise_level_at(b, t) for t in range(500)]

    def test_matches_digest_definition(self):
        import hashlib

        s = _sched()
        for t in (0, 1, 2**40 + 3):
            d = hashlib.sha256(SEED + t.to_bytes(8, "big")).digest()
            assert noise_level_at(s, t) == int.from_bytes(d[:8], "big") % 6

    def test_single_level_always_zero(self):
        s = _sched(m=1)
        assert {noise_level_at(s, t) for t in range(1000)} == {0}

    def test_uniform(self):
        s = _sched()
        counts = np.bincount([noise_level_at(s, t) for t in range(N_SLOTS)], minlength=6)
        assert stats.chisquare(counts).pvalue > 0.01

    @pytest.mark.parametrize("byte", [0, 5, 12])
    def test_avalanche_bitwise(self, byte):
        import hashlib

        flipped = bytearray(SEED)
        flipped[byte] ^= 0x01

        def words(seed):
            return np.array([int.from_bytes(hashlib.sha256(seed + t.to_bytes(8, "big")).digest()[:8], "big")
                             for t in range(AVALANCHE_SLOTS)], dtype=np.uint64)

        x = words(SEED) ^ words(bytes(flipped))
        differing = np.unpackbits(x.view(np.uint8)).mean()
        assert 0.4 <= 1 - differing <= 0.6

    def test_avalanche_levels(self):
        a, b = _sched(), _sched(SEED[:-1] + bytes([SEED[-1] ^ 0x80]))
        differ = np.mean([a.level_at(t) != b.level_at(t) for t in range(AVALANCHE_SLOTS)])
        # independent uniform draws over 6 levels differ 5/6 of the time; SE ~0.004
        assert differ == pytest.approx(5 / 6, abs=0.02)

    def test_slot_of_time(self):
        s = _sched(slot_duration=0.5)
        assert s.slot_of(0.0) == 0 and s.slot_of(1.26) == 2
        with pytest.raises(ValueError):
            s.slot_of(-1)

    def test_sigma_at(self):
        s = _sched()
        assert s.sigma_at(7) == DEFAULT_LEVELS[s.level_at(7)]

    def test_rotation_changes_later_epochs_only(self):
        plain, rot = _sched(), _sched(rotate_every=3)
        assert rot.seed_for_slot(0) == rot.seed_for_slot(2) != rot.seed_for_slot(3)
        diff = np.mean([plain.level_at(t) != rot.level_at(t) for t in range(3000)])
        assert diff > 0.5

    def test_validation(self):
        with pytest.raises(ValueError):
            DisclosureSchedule(SEED, level_count=0, level_map=())
        with pytest.raises(ValueError):
            DisclosureSchedule(SEED, level_count=3)
        with pytest.raises(ValueError):
            noise_level_at(_sched(), -1)

    def test_string_seed_is_utf8(self):
        assert DisclosureSchedule("abc").seed == b"abc"


class TestBinomial:
    @given(st.floats(0, 1))
    def test_single_trial(self, p):
        assert binomial_pmf(1, 1, p) == p

    def test_all_failures(self):
        # six failures at success probability 0.66: 0.34 ** 6
        assert binomial_pmf(6, 0, 0.66) == pytest.approx(0.34**6, rel=1e-12)
        assert binomial_pmf(6, 0, 0.66) == pytest.approx(1.54e-3, abs=1e-5)

    @given(st.integers(1, 200), st.floats(0, 1))
    def test_normalised(self, w, p):
        assert sum(binomial_pmf(w, v, p) for v in range(w + 1)) == pytest.approx(1.0, abs=1e-9)

    def test_log_space_agrees_with_scipy(self):
        for v in (0, 30, 60, 120):
            assert binomial_pmf(120, v, 0.4) == pytest.approx(stats.binom.pmf(v, 120, 0.4), rel=1e-9)

    def test_domain(self):
        with pytest.raises(ValueError):
            binomial_pmf(3, 4, 0.5)
        with pytest.raises(ValueError):
            binomial_pmf(3, 1, 1.5)


class TestPsucc:
    @given(st.floats(0, 1))
    def test_one_round(self, p):
        assert p_succ(1, p) == pytest.approx(p, abs=1e-15)

    def test_odd_symmetry(self):
        assert p_succ(5, 0.5) == 0.5

    def test_legitimate_receiver(self):
        assert p_succ(6, 0.96) > 0.99

    def test_ties_count(self):
        assert p_succ(6, 0.66) == pytest.approx(0.893, abs=1e-3)
        assert p_succ(2, 0.5) == pytest.approx(0.75)

    def test_scipy_oracle(self):
        for w in (3, 6, 15):
            for p in (0.3, 0.6, 0.96):
                assert p_succ(w, p) == pytest.approx(stats.binom.sf(math.ceil(w / 2) - 1, w, p), rel=1e-12)

    @given(st.integers(1, 40), st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_p(self, w, p1, p2):
        lo, hi = sorted((p1, p2))
        assert p_succ(w, lo) <= p_succ(w, hi) + 1e-12

    @pytest.mark.parametrize("w", [1, 3, 6, 15])
    @pytest.mark.parametrize("p", [0.6, 0.8, 0.96])
    def test_monte_carlo_agreement(self, w, p):
        rate, se = vote_monte_carlo(w, p, 20_000, np.random.default_rng([w, int(p * 100)]))
        assert abs(rate - p_succ(w, p)) <= 3 * max(se, 1e-4)

    def test_analysis_object(self):
        a = MajorityVotingAnalysis(0.96, 0.3, 6)
        assert a.p_adversary == pytest.approx(0.66)
        assert a.legitimate > a.adversary
        with pytest.raises(ValueError):
            MajorityVotingAnalysis(0.2, 0.3)


class TestVote:
    def test_mode(self):
        assert majority_vote([2, 2, 7]) == 2

    def test_tie_goes_to_smallest(self):
        assert majority_vote([1, 3]) == 1
        assert majority_vote([9, 4, 4, 9]) == 4

    def test_empty(self):
        with pytest.raises(ValueError):
            majority_vote([])

    @given(st.lists(st.integers(0, 9), min_size=1, max_size=30))
    def test_winner_is_a_mode(self, labels):
        v = majority_vote(labels)
        assert labels.count(v) == max(labels.count(x) for x in labels)


class TestCurves:
    def test_rows(self):
        t = psucc_curves(0.96, (0.0, 0.1, 0.3), 15)
        assert t.w == list(range(1, 16))
        assert t.rows[1][2] == t.rows[0][2]
        assert t.rows[0][2][5] > 0.99

    def test_monotone_over_odd_w(self):
        for _, p, vals in psucc_curves(0.96).rows:
            if p > 0.5:
                odd = vals[0::2]
                assert all(b >= a - 1e-12 for a, b in zip(odd, odd[1:]))

    def test_too_large_delta(self):
        with pytest.raises(ValueError):
            psucc_curves(0.3, (0.5,))

    def test_csv(self, tmp_path):
        path = psucc_curves(0.96, (0.1,), 3).to_csv(tmp_path / "p.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "receiver,p,w1,w2,w3"
        assert lines[1].startswith("legitimate,0.96,0.9600000000")


# --------------------------------------------------------------------------- Monte-Carlo disclosure


def _pool(levels, n_per=20):
    """Each input is encoded as device * 100 + level so toy models can "see" both."""
    return {(d, lv): np.full(n_per, d * 100 + lv) for d in range(N_DEV) for lv in range(levels)}


def _oracle(x):
    return np.asarray(x) // 100


def _blind_above_zero(x):
    # right at level 0, a fixed wrong guess otherwise
    x = np.asarray(x)
    return np.where(x % 100 == 0, x // 100, (x // 100 + 1) % N_DEV)


def _scenario(m=6, adversary=_blind_above_zero, **kw):
    return DisclosureScenario(_sched(m=m), _pool(m), {lv: _oracle for lv in range(m)}, adversary, N_DEV, **kw)


class TestDisclosure:
    def test_gap(self):
        rep = simulate_disclosure(_scenario(), iterations=100, seed=3)
        s = rep.summary
        assert s["legit_accuracy"] == 1.0
        # the adversary is only right in level-0 slots: about 1/6 of them
        assert s["adversary_accuracy"] == pytest.approx(s["by_level"]["0"]["slots"] / s["slots"])
        assert s["gap"] >= 0.2
        assert s["iterations_legit_not_worse"] == 100

    def test_single_noise_free_level_has_no_gap(self):
        rep = simulate_disclosure(_scenario(m=1), iterations=50, seed=1)
        assert rep.summary["legit_accuracy"] == rep.summary["adversary_accuracy"]

    def test_same_models_give_same_accuracy(self):
        rep = simulate_disclosure(_scenario(adversary=_oracle), iterations=30)
        np.testing.assert_array_equal(rep.legit_confusion, rep.adversary_confusion)

    def test_reproducible(self, tmp_path):
        a = simulate_disclosure(_scenario(), iterations=40, seed=9)
        b = simulate_disclosure(_scenario(), iterations=40, seed=9)
        assert a.to_csv(tmp_path / "a.csv").read_bytes() == b.to_csv(tmp_path / "b.csv").read_bytes()
        assert a.to_json(tmp_path / "a.json").read_bytes() == b.to_json(tmp_path / "b.json").read_bytes()

    def test_csv_layout(self, tmp_path):
        rep = simulate_disclosure(_scenario(window=3), iterations=2)
        lines = rep.to_csv(tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "iteration,slot,true_device,level,sigma,legit_prediction,adversary_prediction"
        assert len(lines) == 1 + 2 * 3

    def test_confusion_counts_conserved(self):
        rep = simulate_disclosure(_scenario(), iterations=25)
        assert rep.legit_confusion.sum() == rep.adversary_confusion.sum() == 25 * 6

    def test_missing_model(self):
        sc = _scenario()
        sc.legit_models = {0: _oracle}
        with pytest.raises(MissingModelError):
            simulate_disclosure(sc, iterations=20)

    def test_vote_prediction_reported(self):
        s = simulate_disclosure(_scenario(), iterations=20).summary
        assert s["legit_vote_accuracy"] == 1.0
        assert s["adversary_vote_predicted"] == pytest.approx(p_succ(6, s["adversary_accuracy"]))

    def test_longer_adversary_window(self):
        rep = simulate_disclosure(_scenario(window=3, adversary_window=9), iterations=5)
        assert rep.summary["slots"] == 5 * 9
