import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dalc.errors import EmptyList, EmptyReference, LengthMismatch
from dalc.metrics import ChrfConfig, chrf, mae, mean_chrf, rmse

from oracles import chrf_bruteforce

# frozen from the brute-force oracle before the implementation was written
CHRF_CAT_CART = 0.286764705882353


class TestChrf:
    def test_identical_strings(self):
        assert chrf("abc", "abc") == 1.0

    def test_disjoint_strings(self):
        assert chrf("abc", "xyz") == 0.0

    def test_cat_cart_regression(self):
        assert chrf("cat", "cart") == pytest.approx(CHRF_CAT_CART, abs=1e-12)

    def test_empty_hypothesis_scores_zero(self):
        assert chrf("", "abc") == 0.0

    def test_empty_reference_raises(self):
        with pytest.raises(EmptyReference):
            chrf("abc", "")

    def test_whitespace_only_reference_raises_when_stripping(self):
        with pytest.raises(EmptyReference):
            chrf("abc", "   ")

    def test_whitespace_stripping_toggle(self):
        stripped = chrf("a b", "ab")
        kept = chrf("a b", "ab", ChrfConfig(strip_whitespace=False))
        assert stripped == 1.0
        assert kept < 1.0

    def test_short_strings_skip_high_orders(self):
        # reference has only order-1 n-grams; result is plain unigram F
        assert chrf("a", "a") == 1.0

    def test_beta_weighs_recall(self):
        # hypothesis with perfect precision, partial recall: higher beta hurts
        lo = chrf("ab", "abcd", ChrfConfig(beta=0.5))
        hi = chrf("ab", "abcd", ChrfConfig(beta=3.0))
        assert lo > hi

    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.Generator(np.random.PCG64(42))
        alphabet = "abcdefg "
        for _ in range(60):
            n1, n2 = rng.integers(1, 15, size=2)
            hyp = "".join(rng.choice(list(alphabet), size=n1))
            ref = "".join(rng.choice(list("abcdefg"), size=n2))
            assert chrf(hyp, ref) == pytest.approx(chrf_bruteforce(hyp, ref), abs=1e-9)

    @given(st.text(alphabet="abcdef", min_size=1, max_size=30))
    def test_self_similarity_is_one(self, s):
        assert chrf(s, s) == pytest.approx(1.0, abs=1e-12)

    @given(
        st.text(alphabet="abcd", min_size=0, max_size=20),
        st.text(alphabet="abcd", min_size=1, max_size=20),
    )
    @settings(max_examples=200)
    def test_output_in_unit_interval(self, hyp, ref):
        value = chrf(hyp, ref)
        assert 0.0 <= value <= 1.0


class TestAggregates:
    def test_mean_chrf(self):
        assert mean_chrf([0.4, 0.6]) == pytest.approx(0.5)
        assert mean_chrf([1.0]) == 1.0
        assert mean_chrf([0.0, 0.0, 0.3]) == pytest.approx(0.1)

    def test_mean_chrf_empty(self):
        with pytest.raises(EmptyList):
            mean_chrf([])

    def test_rmse(self):
        assert rmse([0.5, 0.5], [0.4, 0.6]) == pytest.approx(0.1)
        assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
        assert rmse([0], [1]) == 1.0

    def test_mae(self):
        assert mae([0.5, 0.5], [0.4, 0.6]) == pytest.approx(0.1)
        assert mae([0.2, 0.7], [0.2, 0.7]) == 0.0
        assert mae([0], [0.25]) == 0.25

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            rmse([1], [1, 2])
        with pytest.raises(EmptyList):
            rmse([], [])
        with pytest.raises(LengthMismatch):
            mae([1], [1, 2])
        with pytest.raises(EmptyList):
            mae([], [])

    @given(
        st.lists(st.floats(0, 1), min_size=1, max_size=20),
        st.data(),
    )
    @settings(max_examples=150)
    def test_rmse_dominates_mae(self, pred, data):
        gold = data.draw(
            st.lists(st.floats(0, 1), min_size=len(pred), max_size=len(pred))
        )
        r = rmse(pred, gold)
        m = mae(pred, gold)
        assert r >= m - 1e-12 >= -1e-12
        if pred == gold:
            assert r == 0.0 and m == 0.0
        if r == 0.0:
            assert math.isclose(m, 0.0, abs_tol=1e-12)
