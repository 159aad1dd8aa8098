import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fmgan import ndgrad as nd
from fmgan.errors import InputError, ParameterError
from fmgan.textdata import (BOS, EOS, PAD, UNK, Corpus, MarkovChain, Vocab, bigram_tv,
                            build_vocab, chain_vocab, decode, embed, encode, load_corpus,
                            modified_precision, self_bleu, synth_corpus, test_bleu, to_states)


class TestVocab:
    def test_frequency_order(self):
        v = build_vocab(["a b a"])
        assert v.tokens[4:] == ("a", "b")
        assert v.id("a") == 4 and v.id("b") == 5

    def test_min_count(self):
        v = build_vocab(["a b a"], min_count=2)
        assert v.tokens[4:] == ("a",)
        assert v.id("b") == UNK

    def test_ties_lexicographic_and_lowercase(self):
        v = build_vocab(["Zeta alpha", "ALPHA zeta beta"])
        assert v.tokens[4:] == ("alpha", "zeta", "beta")

    def test_cap(self, tmp_path):
        rng = np.random.default_rng(0)
        words = [f"w{i}" for i in range(8000)]
        path = tmp_path / "big.txt"
        path.write_text("\n".join(" ".join(rng.choice(words, 12)) for _ in range(10000)))
        v = build_vocab(path.read_text().splitlines(), cap=5728)
        assert len(v) <= 5728

    def test_empty_stream(self):
        with pytest.raises(InputError):
            build_vocab([])
        with pytest.raises(InputError):
            build_vocab(["   "])

    def test_bad_min_count(self):
        with pytest.raises(ParameterError):
            build_vocab(["a"], min_count=0)

    def test_deterministic(self):
        lines = ["b a c c", "a d d d"]
        assert build_vocab(lines) == build_vocab(list(lines))

    def test_file_round_trip(self, tmp_path):
        v = build_vocab(["x y z y"])
        v.save(tmp_path / "vocab.txt")
        assert (tmp_path / "vocab.txt").read_text().splitlines() == ["y", "x", "z"]
        assert Vocab.load(tmp_path / "vocab.txt") == v


class TestEncode:
    vocab = build_vocab(["the cat sat on the mat"])

    def test_round_trip(self):
        ids = encode(self.vocab, "the cat sat", 6)
        assert list(ids[3:]) == [PAD] * 3
        assert decode(self.vocab, ids) == "the cat sat"

    def test_truncation(self):
        ids = encode(self.vocab, "the cat sat on the mat", 4)
        assert decode(self.vocab, ids) == "the cat sat on"

    def test_all_oov(self):
        assert list(encode(self.vocab, "dog barks", 2)) == [UNK, UNK]

    def test_short_length(self):
        with pytest.raises(ParameterError):
            encode(self.vocab, "the", 1)

    def test_decode_stops_at_eos_and_skips_bos(self):
        cat = self.vocab.id("cat")
        assert decode(self.vocab, [BOS, cat, EOS, cat]) == "cat"

    def test_toy_corpus_round_trip(self):
        chain = MarkovChain.random(seed=3)
        corpus = synth_corpus(chain, 2000, 12, seed=4)
        for line, row in zip(corpus.lines(), corpus.sequences):
            np.testing.assert_array_equal(encode(corpus.vocab, line, 12), row)

    def test_corpus_file(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("the cat\n\nsat on the mat\n")
        c = load_corpus(path, self.vocab, 5)
        assert c.lines() == ["the cat", "sat on the mat"]
        with pytest.raises(InputError):
            load_corpus(tmp_path / "missing.txt", self.vocab, 5)

    def test_corpus_validation(self):
        with pytest.raises(InputError):
            Corpus(np.zeros((2, 3), dtype=int), self.vocab)
        with pytest.raises(InputError):
            Corpus(np.full((1, 3), 99), self.vocab)


class TestEmbed:
    W = np.arange(12.0).reshape(3, 4)

    def test_column_selection(self):
        np.testing.assert_array_equal(embed(self.W, [2]).data, self.W[:, [2]])
        np.testing.assert_array_equal(embed(self.W, [PAD, 3]).data, self.W[:, [0, 3]])

    def test_batch_layout(self):
        out = embed(self.W, [[1, 2], [3, 0]])
        assert out.shape == (2, 3, 2)
        np.testing.assert_array_equal(out.data[1], self.W[:, [3, 0]])

    def test_out_of_range(self):
        with pytest.raises(InputError):
            embed(self.W, [4])

    def test_gradient_is_count_matrix(self):
        ids = np.array([[1, 1, 3], [0, 1, 2]])
        tape = nd.Tape()
        g = nd.backward(tape, embed(tape.leaf("W", self.W), ids).sum())["W"]
        counts = np.bincount(ids.ravel(), minlength=4)
        np.testing.assert_array_equal(g, np.tile(counts, (3, 1)))


class TestMarkov:
    def test_deterministic_chain(self):
        T = np.roll(np.eye(3), 1, axis=1)
        chain = MarkovChain(("a", "b", "c"), T, [1.0, 0.0, 0.0])
        c = synth_corpus(chain, 50, 6, seed=0)
        assert (c.sequences == c.sequences[0]).all()
        assert c.lines()[0] == "a b c a b c"

    def test_uniform_chain_law_of_large_numbers(self):
        chain = MarkovChain(tuple("abcd"), np.full((4, 4), 0.25), np.full(4, 0.25))
        c = synth_corpus(chain, 10000, 12, seed=1)
        assert bigram_tv(c.sequences, chain) <= 0.05

    def test_seed_determinism(self):
        chain = MarkovChain.random(seed=2)
        a, b = synth_corpus(chain, 100, 12, seed=5), synth_corpus(chain, 100, 12, seed=5)
        np.testing.assert_array_equal(a.sequences, b.sequences)

    def test_invalid_rows(self):
        with pytest.raises(ParameterError):
            MarkovChain(("a", "b"), [[0.5, 0.6], [0.5, 0.5]], [0.5, 0.5])
        with pytest.raises(ParameterError):
            MarkovChain(("a", "b"), [[1.0, 0.0], [0.5, 0.5]], [0.7, 0.7])

    def test_random_chain_structure(self):
        chain = MarkovChain.random(20, 4, seed=7)
        assert ((chain.transitions > 0).sum(axis=1) == 4).all()
        assert len(chain_vocab(chain)) == 24

    def test_file_round_trip(self, tmp_path):
        chain = MarkovChain.random(6, 2, seed=8)
        chain.save(tmp_path / "chain.cfg")
        back = MarkovChain.load(tmp_path / "chain.cfg")
        assert back.states == chain.states
        np.testing.assert_array_equal(back.transitions, chain.transitions)

    def test_file_missing_key(self, tmp_path):
        (tmp_path / "bad.cfg").write_text("states = a b\nstart = 0.5 0.5\n")
        with pytest.raises(InputError, match="transitions"):
            MarkovChain.load(tmp_path / "bad.cfg")

    def test_bigram_distribution_sums_to_one(self):
        B = MarkovChain.random(seed=9).bigram_distribution(12)
        assert B.sum() == pytest.approx(1.0, abs=1e-12)

    def test_reserved_tokens_count_against_tv(self):
        chain = MarkovChain.random(seed=10)
        ids = np.full((5, 12), UNK)
        assert bigram_tv(ids, chain) == pytest.approx(1.0)
        assert (to_states(ids) == -1).all()

    def test_log_likelihood_prefers_own_chain(self):
        a, b = MarkovChain.random(seed=11), MarkovChain.random(seed=12)
        x = a.sample(200, 12, np.random.default_rng(0))
        assert (a.log_likelihood(x) > b.log_likelihood(x)).mean() > 0.95


def naive_self_bleu(cands, n):
    return float(np.mean([test_bleu([c], cands[:i] + cands[i + 1:], n)
                          for i, c in enumerate(cands)]))


class TestBleu:
    def test_clipped_unigram_hand_case(self):
        clipped, total = modified_precision(["the the the the the the the"],
                                            ["the cat is on the mat"], 1)
        assert Fraction(clipped, total) == Fraction(2, 7)

    def test_identical(self):
        sents = ["a b c d e", "b c d e f g"]
        assert test_bleu(sents, sents, 4) == 1.0

    def test_disjoint(self):
        assert test_bleu(["a b c"], ["d e f"], 2) == 0.0

    def test_hand_bleu2_with_brevity_penalty(self):
        # unigram 3/3, bigram 1/2, candidate length 3 vs reference 4
        score = test_bleu(["a b d"], ["a b c d"], 2)
        assert score == pytest.approx(math.exp(1 - 4 / 3) * math.sqrt(1.0 * 0.5), abs=1e-15)

    def test_bad_order(self):
        with pytest.raises(ParameterError):
            test_bleu(["a"], ["a"], 6)

    def test_empty_candidates(self):
        with pytest.raises(InputError):
            test_bleu([], ["a"], 2)

    def test_self_bleu_identical(self):
        assert self_bleu(["x y z w"] * 4, 4) == 1.0

    def test_self_bleu_disjoint(self):
        assert self_bleu(["a b", "c d", "e f"], 2) == 0.0

    def test_self_bleu_needs_two(self):
        with pytest.raises(InputError):
            self_bleu(["a b"], 2)

    def test_self_bleu_matches_naive(self):
        rng = np.random.default_rng(0)
        cands = [list(rng.integers(4, 10, size=int(rng.integers(3, 9)))) for _ in range(40)]
        for n in (2, 3):
            assert self_bleu(cands, n) == pytest.approx(naive_self_bleu(cands, n), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.lists(st.integers(4, 9), min_size=1, max_size=8), min_size=2, max_size=12),
           st.lists(st.lists(st.integers(4, 9), min_size=1, max_size=8), min_size=1, max_size=12),
           st.randoms(use_true_random=False))
    def test_bounds_and_permutation_invariance(self, cands, refs, rnd):
        score = test_bleu(cands, refs, 2)
        assert 0.0 <= score <= 1.0
        shuffled = list(cands)
        rnd.shuffle(shuffled)
        assert test_bleu(shuffled, refs, 2) == pytest.approx(score, abs=1e-12)
        assert test_bleu(cands, cands, 2) == 1.0
        assert 0.0 <= self_bleu(cands, 2) <= 1.0
