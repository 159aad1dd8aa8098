"""Vocabulary, corpora, embeddings, synthetic Markov corpora and BLEU.

Ids 0-3 are reserved (PAD, UNK, BOS, EOS). Sentences are encoded without a
BOS marker, truncated to ``L`` tokens and right-padded with PAD.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, List, Optional, Sequence

import numpy as np

from . import ndgrad as nd
from .errors import InputError, ParameterError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")


def tokenize(line: str) -> List[str]:
    return line.lower().split()


@dataclass(frozen=True)
class Vocab:
    tokens: tuple
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise InputError("vocabulary must start with the reserved tokens")
        index = {t: i for i, t in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise InputError("duplicate tokens in vocabulary")
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    @classmethod
    def from_words(cls, words: Iterable[str]) -> "Vocab":
        return cls(RESERVED + tuple(words))

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens[4:]), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_words(line for line in lines if line)


def build_vocab(lines: Iterable[str], min_count: int = 1, cap: Optional[int] = None) -> Vocab:
    """Most frequent first, ties broken lexicographically; ``cap`` bounds ``len(vocab)``."""
    if min_count < 1:
        raise ParameterError(f"min_count must be >= 1, got {min_count}")
    counts: Counter = Counter()
    seen = False
    for line in lines:
        seen = True
        counts.update(tokenize(line))
    if not seen or not counts:
        raise InputError("cannot build a vocabulary from an empty stream")
    words = sorted((w for w, c in counts.items() if c >= min_count and w not in RESERVED),
                   key=lambda w: (-counts[w], w))
    if cap is not None:
        words = words[:max(cap - len(RESERVED), 0)]
    return Vocab.from_words(words)


def encode(vocab: Vocab, sentence: str, L: int) -> np.ndarray:
    if L < 2:
        raise ParameterError(f"sequence length must be >= 2, got {L}")
    ids = [vocab.id(t) for t in tokenize(sentence)][:L]
    out = np.full(L, PAD, dtype=np.int64)
    out[:len(ids)] = ids
    return out


def content_ids(ids: Sequence[int]) -> List[int]:
    """Ids up to the first PAD/EOS, BOS dropped."""
    out = []
    for i in ids:
        i = int(i)
        if i in (PAD, EOS):
            break
        if i != BOS:
            out.append(i)
    return out


def decode(vocab: Vocab, ids: Sequence[int]) -> str:
    return " ".join(vocab.tokens[i] for i in content_ids(ids))


@dataclass
class Corpus:
    """Fixed-length id sequences, one row per sentence."""

    sequences: np.ndarray
    vocab: Vocab
    source: str = ""
    split: str = "train"
    chain: Optional["MarkovChain"] = None

    def __post_init__(self):
        seqs = np.asarray(self.sequences, dtype=np.int64)
        if seqs.ndim != 2 or len(seqs) == 0:
            raise InputError("corpus must be a non-empty 2-D id array")
        if seqs.min() < 0 or seqs.max() >= len(self.vocab):
            raise InputError("corpus ids out of vocabulary range")
        if ((seqs != PAD).sum(axis=1) == 0).any():
            raise InputError("every sequence needs at least one non-PAD token")
        self.sequences = seqs

    def __len__(self):
        return len(self.sequences)

    @property
    def length(self) -> int:
        return self.sequences.shape[1]

    def token_lists(self) -> List[List[int]]:
        return [content_ids(row) for row in self.sequences]

    def lines(self) -> List[str]:
        return [decode(self.vocab, row) for row in self.sequences]

    def save(self, path) -> None:
        Path(path).write_text("".join(s + "\n" for s in self.lines()), encoding="utf-8")


def read_lines(path) -> List[str]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"corpus file not found: {p}")
    return p.read_text(encoding="utf-8").splitlines()


def load_corpus(path, vocab: Vocab, L: int, split: str = "train") -> Corpus:
    rows = [encode(vocab, line, L) for line in read_lines(path) if tokenize(line)]
    if not rows:
        raise InputError(f"no sentences in {path}")
    return Corpus(np.stack(rows), vocab, source=str(path), split=split)


def embed(W_e, ids) -> nd.Tensor:
    """Look up embedding columns: ids of shape ``[L]`` give ``[k, L]``, ``[n, L]`` give ``[n, k, L]``."""
    W_e = nd.as_tensor(W_e)
    ids = np.asarray(ids, dtype=np.int64)
    v = W_e.shape[1]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise InputError(f"token id out of range for vocabulary of size {v}")
    out = nd.getitem(W_e, (slice(None), ids))
    if ids.ndim == 2:
        out = nd.transpose(out, (1, 0, 2))
    return out


# ---------------------------------------------------------------- Markov chains


@dataclass
class MarkovChain:
    """First-order chain over named states with a start distribution."""

    states: tuple
    transitions: np.ndarray
    start: np.ndarray

    def __post_init__(self):
        self.states = tuple(self.states)
        s = len(self.states)
        self.transitions = np.asarray(self.transitions, dtype=np.float64).reshape(s, s)
        self.start = np.asarray(self.start, dtype=np.float64).reshape(s)
        for name, arr in (("transitions", self.transitions), ("start", self.start)):
            if (arr < 0).any() or np.abs(arr.sum(axis=-1) - 1.0).max() > 1e-9:
                raise ParameterError(f"{name} rows must be probability vectors")

    @property
    def size(self) -> int:
        return len(self.states)

    @classmethod
    def random(cls, num_states: int = 20, branching: int = 4, seed: int = 0,
               prefix: str = "w") -> "MarkovChain":
        """Sparse random chain: each state moves to ``branching`` successors."""
        rng = np.random.default_rng(seed)
        T = np.zeros((num_states, num_states))
        for i in range(num_states):
            succ = rng.choice(num_states, size=branching, replace=False)
            T[i, succ] = rng.dirichlet(np.ones(branching))
        states = tuple(f"{prefix}{i:02d}" for i in range(num_states))
        return cls(states, T, np.full(num_states, 1.0 / num_states))

    def sample(self, count: int, L: int, rng: np.random.Generator) -> np.ndarray:
        """State-index sequences of shape ``[count, L]``."""
        out = np.empty((count, L), dtype=np.int64)
        cum_start = np.cumsum(self.start)
        cum_T = np.cumsum(self.transitions, axis=1)
        u = rng.random((count, L))
        out[:, 0] = np.minimum(np.searchsorted(cum_start, u[:, 0], side="right"), self.size - 1)
        for t in range(1, L):
            rows = cum_T[out[:, t - 1]]
            out[:, t] = np.minimum((rows <= u[:, t, None]).sum(axis=1), self.size - 1)
        return out

    def bigram_distribution(self, L: int) -> np.ndarray:
        """Expected share of each (a, b) among the L-1 bigrams of a length-L sample."""
        p = self.start.copy()
        B = np.zeros((self.size, self.size))
        for _ in range(L - 1):
            B += p[:, None] * self.transitions
            p = p @ self.transitions
        return B / (L - 1)

    def log_likelihood(self, states: np.ndarray, smoothing: float = 1e-3) -> np.ndarray:
        """Per-sequence log-probability; index -1 marks a token outside the chain."""
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        s = self.size
        T = np.full((s + 1, s + 1), smoothing)
        T[:s, :s] += self.transitions
        T /= T.sum(axis=1, keepdims=True)
        start = np.append(self.start, 0.0) + smoothing
        start /= start.sum()
        idx = np.where(states < 0, s, states)
        ll = np.log(start[idx[:, 0]])
        ll += np.log(T[idx[:, :-1], idx[:, 1:]]).sum(axis=1)
        return ll

    def save(self, path) -> None:
        lines = [
            "states = " + " ".join(self.states),
            "transitions = " + " ".join(repr(float(x)) for x in self.transitions.ravel()),
            "start = " + " ".join(repr(float(x)) for x in self.start),
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MarkovChain":
        fields = {}
        for raw in read_lines(path):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise InputError(f"malformed chain line: {raw!r}")
            fields[key.strip()] = value.split()
        missing = {"states", "transitions", "start"} - fields.keys()
        if missing:
            raise InputError(f"chain file missing keys: {sorted(missing)}")
        states = fields["states"]
        trans = np.array([float(x) for x in fields["transitions"]])
        if trans.size != len(states) ** 2:
            raise InputError("transitions must hold states^2 values, row-major")
        return cls(states, trans, [float(x) for x in fields["start"]])


def chain_vocab(chain: MarkovChain) -> Vocab:
    return Vocab.from_words(chain.states)


def to_states(ids: np.ndarray) -> np.ndarray:
    """Map vocabulary ids of a chain corpus to state indices (-1 for reserved ids)."""
    ids = np.asarray(ids, dtype=np.int64)
    return np.where(ids >= len(RESERVED), ids - len(RESERVED), -1)


def synth_corpus(chain: MarkovChain, count: int, L: int, seed: int,
                 split: str = "train") -> Corpus:
    """Sample ``count`` length-``L`` sentences; the chain is kept on the corpus."""
    rng = np.random.default_rng(seed)
    seqs = chain.sample(count, L, rng) + len(RESERVED)
    return Corpus(seqs, chain_vocab(chain), source=f"markov(seed={seed})", split=split,
                  chain=chain)


def bigram_tv(ids: np.ndarray, chain: MarkovChain) -> float:
    """Total-variation distance between empirical bigrams of ``ids`` and the chain's.

    Bigrams touching a reserved id fall into an extra cell the chain gives
    zero mass.
    """
    st = to_states(ids)
    L = st.shape[1]
    s = chain.size
    a = np.where(st[:, :-1] < 0, s, st[:, :-1]).ravel()
    b = np.where(st[:, 1:] < 0, s, st[:, 1:]).ravel()
    emp = np.zeros((s + 1, s + 1))
    np.add.at(emp, (a, b), 1.0)
    emp /= emp.sum()
    truth = np.zeros((s + 1, s + 1))
    truth[:s, :s] = chain.bigram_distribution(L)
    return 0.5 * float(np.abs(emp - truth).sum())


# ---------------------------------------------------------------- BLEU


def _token_lists(x) -> List[List[Hashable]]:
    if isinstance(x, Corpus):
        return x.token_lists()
    out = []
    for seq in x:
        if isinstance(seq, str):
            out.append(tokenize(seq))
        elif len(seq) and isinstance(seq[0], str):
            out.append(list(seq))
        else:
            out.append(content_ids(seq))
    return out


def _ngrams(tokens, n) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(candidates, references, n: int):
    """``(clipped matches, candidate n-gram count)`` at order ``n``, pooled over the candidates."""
    cands, refs = _token_lists(candidates), _token_lists(references)
    ceiling: Counter = Counter()
    for r in refs:
        for g, c in _ngrams(r, n).items():
            if c > ceiling[g]:
                ceiling[g] = c
    clipped = total = 0
    for cand in cands:
        counts = _ngrams(cand, n)
        total += sum(counts.values())
        clipped += sum(min(c, ceiling[g]) for g, c in counts.items())
    return clipped, total


def _closest(lengths: Sequence[int], target: int) -> int:
    return min(lengths, key=lambda r: (abs(r - target), r))


def _combine(clipped, totals, cand_len, ref_len) -> float:
    # orders longer than every candidate have no n-grams at all and are left out
    pairs = [(c, t) for c, t in zip(clipped, totals) if t > 0]
    if cand_len == 0 or any(c == 0 for c, _ in pairs):
        return 0.0
    log_p = sum(math.log(c / t) for c, t in pairs) / len(pairs)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def _check_order(max_n):
    if max_n not in (1, 2, 3, 4, 5):
        raise ParameterError(f"max_n must be in 1..5, got {max_n}")


def test_bleu(candidates, references, max_n: int = 4) -> float:
    """Corpus BLEU of ``candidates``, each scored against the whole reference set.

    Clipped n-gram precision, geometric mean over orders 1..max_n, standard
    brevity penalty, no smoothing.
    """
    _check_order(max_n)
    cands, refs = _token_lists(candidates), _token_lists(references)
    if not cands:
        raise InputError("test_bleu needs at least one candidate")
    if not refs:
        raise InputError("test_bleu needs at least one reference")
    stats = [modified_precision(cands, refs, n) for n in range(1, max_n + 1)]
    ref_lengths = sorted({len(r) for r in refs})
    cand_len = sum(len(c) for c in cands)
    ref_len = sum(_closest(ref_lengths, len(c)) for c in cands)
    return _combine([s[0] for s in stats], [s[1] for s in stats], cand_len, ref_len)


test_bleu.__test__ = False  # keep pytest from collecting it when imported into tests


def self_bleu(candidates, max_n: int = 4) -> float:
    """Mean over candidates of BLEU against all the other candidates."""
    _check_order(max_n)
    cands = _token_lists(candidates)
    if len(cands) < 2:
        raise InputError("self_bleu needs at least two candidates")
    grams = [[_ngrams(c, n) for n in range(1, max_n + 1)] for c in cands]
    # per n-gram: the two largest counts and the owner of the largest, so the
    # ceiling "over everyone but me" is O(1) per lookup
    top = [dict() for _ in range(max_n)]
    for owner, per_order in enumerate(grams):
        for k, counts in enumerate(per_order):
            table = top[k]
            for g, c in counts.items():
                first, who, second = table.get(g, (0, -1, 0))
                if c > first:
                    table[g] = (c, owner, first)
                elif c > second:
                    table[g] = (first, who, c)
    length_counts = Counter(len(c) for c in cands)
    scores = []
    for i, per_order in enumerate(grams):
        clipped, totals = [], []
        for k, counts in enumerate(per_order):
            table = top[k]
            hit = 0
            for g, c in counts.items():
                first, who, second = table[g]
                hit += min(c, second if who == i else first)
            clipped.append(hit)
            totals.append(sum(counts.values()))
        own = len(cands[i])
        length_counts[own] -= 1
        others = [r for r, m in length_counts.items() if m > 0]
        length_counts[own] += 1
        scores.append(_combine(clipped, totals, own, _closest(others, own)))
    return float(np.mean(scores))
