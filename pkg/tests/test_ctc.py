import math
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svtr2.ctc import (NEG_SENTINEL, collapse, ctc_lattice, ctc_loss, ctc_loss_batch, ctc_loss_bruteforce,
                       greedy_decode, min_frames, normalize_text, word_accuracy)
from svtr2.ctc.oracle import MAX_PATHS
from svtr2.errors import InfeasibleAlignmentError, InputError, SizeError
from svtr2.gradcheck import check_gradients
from svtr2.tensor import Tensor, backward


def random_instance(rng, max_t=6, max_l=3, max_vocab=4):
    C = int(rng.integers(2, max_vocab + 1))
    L = int(rng.integers(0, max_l + 1))
    label = [int(v) for v in rng.integers(0, C - 1, size=L)]
    T = int(rng.integers(max(min_frames(label), 1), max_t + 1))
    return rng.normal(scale=2.0, size=(T, C)), label


class TestCtcLoss:
    def test_single_forced_path(self):
        logits = np.array([[0.0, -1e4]])
        assert ctc_loss(logits, [0]).item() == pytest.approx(0.0, abs=1e-12)

    def test_three_frames_uniform(self):
        # 6 of the 8 two-class paths collapse to "a"
        loss = ctc_loss(np.zeros((3, 2)), [0]).item()
        assert loss == pytest.approx(-math.log(0.75), abs=1e-12)
        assert loss == pytest.approx(0.287682, abs=1e-6)

    def test_repeat_needs_blank(self, rng):
        logits = rng.normal(size=(4, 2))
        assert ctc_loss(logits, [0, 0]).item() == pytest.approx(ctc_loss_bruteforce(logits, [0, 0]), abs=1e-9)

    def test_matches_bruteforce_on_random_instances(self, rng):
        for _ in range(250):
            logits, label = random_instance(rng)
            assert ctc_loss(logits, label).item() == pytest.approx(ctc_loss_bruteforce(logits, label), abs=1e-9)

    def test_empty_label_is_all_blank_path(self, rng):
        logits = rng.normal(size=(3, 3))
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        assert ctc_loss(logits, []).item() == pytest.approx(-logp[:, 2].sum(), abs=1e-12)

    def test_too_few_frames(self, rng):
        with pytest.raises(InfeasibleAlignmentError):
            ctc_loss(rng.normal(size=(2, 3)), [1, 1])
        assert ctc_loss_bruteforce(rng.normal(size=(2, 3)), [1, 1]) == math.inf

    def test_blank_in_label_rejected(self):
        with pytest.raises(InputError):
            ctc_loss(np.zeros((3, 3)), [2])

    def test_lattice_values_are_log_probabilities(self, rng):
        alpha = ctc_lattice(rng.normal(size=(5, 4)), [0, 2])
        assert alpha.shape == (5, 5)
        assert (alpha <= 1e-12).all()
        assert (alpha >= NEG_SENTINEL).all()

    def test_gradient(self, rng):
        x = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        assert check_gradients(lambda: ctc_loss(x, [0, 2, 2]), [x]).max_rel_err < 1e-6

    def test_label_logit_gradient_bounded_by_softmax(self, rng):
        # d loss / d logit = softmax - occupancy, and occupancy is non-negative
        for _ in range(50):
            logits, label = random_instance(rng)
            x = Tensor(logits, requires_grad=True)
            backward(ctc_loss(x, label))
            probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
            assert (x.grad <= probs + 1e-12).all()
            np.testing.assert_allclose(x.grad.sum(axis=1), 0.0, atol=1e-9)

    def test_long_sequence_stays_finite(self, rng):
        logits = rng.normal(size=(400, 40)) * 5
        label = list(rng.integers(0, 39, size=120))
        loss = ctc_loss(logits, label).item()
        assert math.isfinite(loss) and loss > 0


class TestCtcBatch:
    def test_mean_of_samples(self, rng):
        logits = rng.normal(size=(3, 5, 4))
        labels = [[0], [1, 2], [2, 2]]
        loss, skipped = ctc_loss_batch(logits, labels)
        expected = np.mean([ctc_loss(logits[b], labels[b]).item() for b in range(3)])
        assert skipped == 0 and loss.item() == pytest.approx(expected, abs=1e-12)

    def test_infeasible_sample_skipped(self, rng):
        logits = rng.normal(size=(2, 2, 3))
        loss, skipped = ctc_loss_batch(logits, [[0], [1, 1]])
        assert skipped == 1
        assert loss.item() == pytest.approx(ctc_loss(logits[0], [0]).item())

    def test_all_infeasible(self, rng):
        loss, skipped = ctc_loss_batch(rng.normal(size=(1, 1, 3)), [[0, 0]])
        assert loss is None and skipped == 1


class TestOracle:
    def test_single_frame_single_class(self):
        logits = np.array([[0.3, 0.1]])
        assert ctc_loss_bruteforce(logits, [0]) == pytest.approx(ctc_loss(logits, [0]).item(), abs=1e-15)

    def test_size_guard(self):
        with pytest.raises(SizeError):
            ctc_loss_bruteforce(np.zeros((30, 4)), [0])
        assert MAX_PATHS >= 4 ** 6


class TestDecode:
    def test_collapse_rules(self):
        blank = 9
        assert collapse([blank, 0, 0, blank, 1], blank) == (0, 1)
        assert collapse([blank, blank], blank) == ()
        assert collapse([0, blank, 0], blank) == (0, 0)

    def test_greedy_decode(self):
        logits = np.full((5, 3), -5.0)
        for t, c in enumerate([2, 0, 0, 2, 1]):
            logits[t, c] = 5.0
        dec = greedy_decode(logits)
        assert dec.indices == (0, 1)
        assert dec.text("ab") == "ab"
        assert 0.0 < dec.confidence <= 1.0

    def test_ties_go_to_lowest_index(self):
        assert greedy_decode(np.zeros((1, 3))).indices == (0,)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 3), max_size=12))
    def test_never_emits_blank_and_is_idempotent(self, trace):
        out = collapse(trace, 3)
        assert 3 not in out
        separated = [c for pair in zip(out, [3] * len(out)) for c in pair]
        assert collapse(separated, 3) == out


class TestWordAccuracy:
    def test_identical(self):
        assert word_accuracy(["cat", "dog"], ["cat", "dog"]) == 1.0

    def test_case_folded(self):
        assert word_accuracy(["CAT"], ["cat"]) == 1.0

    def test_one_of_four_wrong(self):
        assert word_accuracy(["a", "b", "c", "x"], ["a", "b", "c", "d"]) == 0.75

    def test_special_characters_dropped(self):
        assert normalize_text("It's-OK!") == "itsok"

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            word_accuracy(["a"], ["a", "b"])


def test_nan_logits_propagate():
    logits = np.zeros((4, 3))
    logits[2, 1] = np.nan
    assert math.isnan(ctc_loss(logits, [0]).item())
