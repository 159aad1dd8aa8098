"""Conditional generation with FMD critics: style transfer and deciphering.

Style transfer uses an LSTM encoder ``E(x, c)`` and a conditional LSTM
decoder ``G(z, c)``. The min player (encoder, decoder, style embeddings)
minimises reconstruction NLL plus ``lam`` times the two-way adversarial FMD.
The critic ``F`` ascends the adversarial term.

Deciphering uses two position-wise soft token mappers ``G1: X1 -> X2`` and
``G2: X2 -> X1`` with one extractor per side. The min player minimises an L1
cycle loss in feature space plus ``lam`` times the adversarial FMD; the
extractors ascend the adversarial term (and, by default, the cycle term).

Both tasks ship toy corpora built from random Markov chains so that success
can be measured against a known answer.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import ndgrad as nd
from .errors import ConfigError, DimensionError, InputError, NumericError
from .fmd import fmd_loss
from .nets import (NetConfig, extract_features, generate_hard, generate_soft, init_embedding,
                   init_extractor, init_lstm, load_checkpoint, lstm_step, save_checkpoint)
from .ot import SolverConfig, marginal_residual
from .textdata import (BOS, PAD, RESERVED, Corpus, MarkovChain, chain_vocab, embed,
                       synth_corpus, to_states)
from .train import AdamState, MetricRecord, TrainHistory, adam_step, clip_by_global_norm

Params = Dict[str, np.ndarray]


# ---------------------------------------------------------------- configuration


@dataclass
class CondConfig:
    batch_size: int = 64
    lr: float = 1e-3
    critic_lr: Optional[float] = None
    iterations: int = 2000
    critic_steps: int = 1
    tau: float = 0.1
    lam: float = 1.0
    grad_clip: float = 5.0
    embedding_owner: str = "generator"
    seed: int = 0
    beta: float = 0.5
    inner_k: int = 1
    ipot_iters: int = 100
    seq_len: int = 12
    emb_dim: int = 64
    hidden: int = 128
    windows: Tuple[int, ...] = (3, 4, 5)
    filters: int = 32
    activation: str = "tanh"
    eval_every: int = 250
    eval_size: int = 500
    checkpoint_every: int = 0

    def __post_init__(self):
        self.windows = tuple(int(w) for w in self.windows)
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.critic_steps < 1:
            raise ConfigError("critic_steps must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not (self.lr >= 0 and self.tau > 0 and self.beta > 0 and self.grad_clip > 0):
            raise ConfigError("lr must be >= 0; tau, beta and grad_clip must be positive")
        if self.critic_lr is not None and not self.critic_lr >= 0:
            raise ConfigError("critic_lr must be >= 0")
        if not self.lam >= 0:
            raise ConfigError("lam must be >= 0")
        if self.embedding_owner not in ("critic", "generator", "frozen"):
            raise ConfigError("embedding_owner must be 'critic', 'generator' or 'frozen'")

    def solver(self) -> SolverConfig:
        return SolverConfig.training(self.beta, self.inner_k, self.ipot_iters)

    def net_config(self, vocab_size: int, noise_dim: int = 1) -> NetConfig:
        return NetConfig(vocab_size=vocab_size, seq_len=self.seq_len, emb_dim=self.emb_dim,
                         hidden=self.hidden, noise_dim=noise_dim, windows=self.windows,
                         filters=self.filters, activation=self.activation)


@dataclass
class StyleConfig(CondConfig):
    style_dim: int = 16

    def __post_init__(self):
        super().__post_init__()
        if self.style_dim < 1:
            raise ConfigError("style_dim must be >= 1")


@dataclass
class CipherConfig(CondConfig):
    iterations: int = 3000
    embedding_owner: str = "critic"
    critic_cycle: bool = True


def _check_batches(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a)[0] != np.shape(b)[0]:
        raise DimensionError(f"batch sizes differ: {np.shape(a)[0]} vs {np.shape(b)[0]}")


def fmd_sum(pairs, solver: SolverConfig):
    """Sum of FMD values over ``(F_a, F_b)`` pairs; returns the tensor and the plans."""
    total, plans = None, []
    for Fa, Fb in pairs:
        val, T = fmd_loss(Fa, Fb, solver)
        total = val if total is None else total + val
        plans.append(T)
    return total, plans


def l1_feature_distance(Fa, Fb) -> nd.Tensor:
    """Mean over the batch of the entrywise L1 distance between feature columns."""
    Fa, Fb = nd.as_tensor(Fa), nd.as_tensor(Fb)
    if Fa.shape != Fb.shape:
        raise DimensionError(f"feature batches must match: {Fa.shape} vs {Fb.shape}")
    return nd.absolute(Fa - Fb).sum(axis=0).mean()


def token_nll(logits, ids) -> nd.Tensor:
    """Mean negative log-likelihood of ``ids`` ``[n, L]`` under ``logits`` ``[n, L, v]``, PAD skipped."""
    ids = np.asarray(ids, dtype=np.int64)
    logp = nd.log_softmax(nd.as_tensor(logits), axis=2)
    n, L = ids.shape
    picked = nd.getitem(logp, (np.arange(n)[:, None], np.arange(L)[None, :], ids))
    mask = (ids != PAD).astype(np.float64)
    count = mask.sum()
    if count == 0:
        raise InputError("no target tokens to score")
    return -(picked * mask).sum() / count


# ---------------------------------------------------------------- style transfer


class StyleModel:
    """Encoder, conditional decoder, two style embeddings and one extractor.

    Parameters: ``emb.W_e``, ``enc.*`` (LSTM, no output layer), ``style.enc``
    and ``style.dec`` (``[2, s]``), ``dec.*`` (LSTM with output layer,
    conditioned on ``[z, style.dec[c]]``) and ``ext.*``.
    """

    def __init__(self, net: NetConfig, style_dim: int = 16, seed: int = 0):
        self.net = net
        self.style_dim = style_dim
        rng = np.random.default_rng(seed)
        h, s = net.hidden, style_dim
        p = init_embedding(net, rng)
        p.update(init_lstm(net, rng, "enc", input_dim=net.emb_dim, cond_dim=0, out_dim=0))
        p["style.enc"] = rng.normal(0.0, 0.1, size=(2, s))
        p["style.dec"] = rng.normal(0.0, 0.1, size=(2, s))
        p.update(init_lstm(net, rng, "dec", cond_dim=h + 2 * s))
        p.update(init_extractor(net, rng))
        self.params: Params = p

    @property
    def critic_names(self) -> Tuple[str, ...]:
        return tuple(sorted(k for k in self.params if k.startswith("ext.")))

    def encode(self, leaves: Mapping, ids, c: int) -> nd.Tensor:
        """``z = [final encoder state ; style.enc[c]]``; PAD positions leave the state unchanged."""
        ids = np.asarray(ids, dtype=np.int64)
        n, L = ids.shape
        W = embed(leaves["emb.W_e"], ids)
        h = nd.Tensor(np.zeros((n, self.net.hidden)))
        cell = nd.Tensor(np.zeros((n, self.net.hidden)))
        empty = nd.Tensor(np.zeros((n, 0)))
        for t in range(L):
            h_new, c_new, _ = lstm_step(W[:, :, t], h, cell, empty, leaves, "enc")
            keep = (ids[:, t] != PAD).astype(np.float64)[:, None]
            h = h_new * keep + h * (1.0 - keep)
            cell = c_new * keep + cell * (1.0 - keep)
        style = nd.getitem(nd.as_tensor(leaves["style.enc"]), np.full(n, c))
        return nd.concat([h, style], axis=1)

    def _cond(self, leaves, z, c: int) -> nd.Tensor:
        z = nd.as_tensor(z)
        style = nd.getitem(nd.as_tensor(leaves["style.dec"]), np.full(z.shape[0], c))
        return nd.concat([z, style], axis=1)

    def decode_logits(self, leaves: Mapping, z, c: int, ids) -> nd.Tensor:
        """Teacher-forced decoder logits ``[n, L, v]`` for target sentences ``ids``."""
        ids = np.asarray(ids, dtype=np.int64)
        n, L = ids.shape
        cond = self._cond(leaves, z, c)
        prev = np.concatenate([np.full((n, 1), BOS), ids[:, :-1]], axis=1)
        W = embed(leaves["emb.W_e"], prev)
        h = nd.Tensor(np.zeros((n, self.net.hidden)))
        cell = nd.Tensor(np.zeros((n, self.net.hidden)))
        steps = []
        for t in range(L):
            h, cell, a = lstm_step(W[:, :, t], h, cell, cond, leaves, "dec")
            steps.append(a)
        return nd.stack(steps, axis=1)

    def transfer_soft(self, leaves: Mapping, ids, source: int, target: int, tau: float) -> nd.Tensor:
        z = self.encode(leaves, ids, source)
        return generate_soft(self._cond(leaves, z, target), self.net.seq_len, tau, leaves, prefix="dec")

    def transfer_hard(self, ids, source: int, target: int) -> np.ndarray:
        z = self.encode(self.params, ids, source)
        return generate_hard(self._cond(self.params, z, target).data, self.net.seq_len, self.params,
                             prefix="dec")

    def features(self, leaves: Mapping, W) -> nd.Tensor:
        return extract_features(W, leaves, self.net.windows, activation=self.net.activation)


def style_nll(model: StyleModel, leaves: Mapping, ids, c: int) -> nd.Tensor:
    """Per-token NLL of reconstructing ``ids`` of style ``c`` through the autoencoder."""
    z = model.encode(leaves, ids, c)
    return token_nll(model.decode_logits(leaves, z, c, ids), ids)


def reconstruction_loss(model: StyleModel, leaves: Mapping, ids1, ids2) -> nd.Tensor:
    """Per-token reconstruction NLL of each style, summed over the two styles."""
    return style_nll(model, leaves, ids1, 0) + style_nll(model, leaves, ids2, 1)


def style_adv_loss(model: StyleModel, leaves: Mapping, ids1, ids2, tau: float,
                   solver: SolverConfig = SolverConfig.training()):
    """FMD(transferred 1->2, real 2) + FMD(transferred 2->1, real 1); returns ``(value, plans)``."""
    _check_batches(ids1, ids2)
    W_e = leaves["emb.W_e"]
    f12 = model.features(leaves, model.transfer_soft(leaves, ids1, 0, 1, tau))
    f21 = model.features(leaves, model.transfer_soft(leaves, ids2, 1, 0, tau))
    real1 = model.features(leaves, embed(W_e, ids1))
    real2 = model.features(leaves, embed(W_e, ids2))
    return fmd_sum(((f12, real2), (f21, real1)), solver)


def style_objective(model: StyleModel, leaves: Mapping, ids1, ids2, lam: float, tau: float,
                    solver: SolverConfig = SolverConfig.training()) -> nd.Tensor:
    """``reconstruction + lam * adversarial``; with ``lam == 0`` the FMD terms are skipped."""
    if not lam >= 0:
        raise ConfigError("lam must be >= 0")
    rec = reconstruction_loss(model, leaves, ids1, ids2)
    if lam == 0:
        return rec
    adv, _ = style_adv_loss(model, leaves, ids1, ids2, tau, solver)
    return rec + lam * adv


def transfer_accuracy(transferred: np.ndarray, target_chain: MarkovChain,
                      source_chain: MarkovChain) -> float:
    """Share of sentences the true chains' likelihood ratio assigns to the target style."""
    st = to_states(transferred)
    return float(np.mean(target_chain.log_likelihood(st) > source_chain.log_likelihood(st)))


# ---------------------------------------------------------------- decipherment


class CipherModel:
    """Two position-wise soft token mappers and one extractor per corpus.

    ``gK.U`` (``[v, k]``) and ``gK.c`` (``[v]``) map each embedded token to
    logits; the output token is the soft-argmax embedding ``W_e softmax``.
    Extractors are ``f1.*`` (plaintext side) and ``f2.*`` (cipher side).
    """

    def __init__(self, net: NetConfig, seed: int = 0):
        self.net = net
        rng = np.random.default_rng(seed)
        p = init_embedding(net, rng)
        s = net.init_scale
        for g in ("g1", "g2"):
            p[f"{g}.U"] = rng.uniform(-s, s, size=(net.vocab_size, net.emb_dim))
            p[f"{g}.c"] = np.zeros(net.vocab_size)
        p.update(init_extractor(net, rng, "f1"))
        p.update(init_extractor(net, rng, "f2"))
        self.params: Params = p

    @property
    def critic_names(self) -> Tuple[str, ...]:
        return tuple(sorted(k for k in self.params if k.startswith(("f1.", "f2."))))

    @staticmethod
    def logits(leaves: Mapping, W, gen: str) -> nd.Tensor:
        """Per-position logits ``[n, L, v]`` for embedded sentences ``W`` ``[n, k, L]``."""
        x = nd.transpose(nd.as_tensor(W), (0, 2, 1))
        return x @ nd.transpose(nd.as_tensor(leaves[f"{gen}.U"])) + nd.as_tensor(leaves[f"{gen}.c"])

    def map_soft(self, leaves: Mapping, W, gen: str, tau: float) -> nd.Tensor:
        probs = nd.softmax(self.logits(leaves, W, gen), temperature=tau, axis=2)
        out = probs @ nd.transpose(nd.as_tensor(leaves["emb.W_e"]))     # n, L, k
        return nd.transpose(out, (0, 2, 1))

    def map_hard(self, ids, gen: str) -> np.ndarray:
        W = embed(self.params["emb.W_e"], ids)
        return np.argmax(self.logits(self.params, W, gen).data, axis=2)

    def features(self, leaves: Mapping, W, side: str) -> nd.Tensor:
        return extract_features(W, leaves, self.net.windows, prefix=side, activation=self.net.activation)


def cycle_loss(model: CipherModel, leaves: Mapping, ids1, ids2, tau: float) -> nd.Tensor:
    """L1 feature distance of each corpus to its own round trip, summed over both corpora."""
    _check_batches(ids1, ids2)
    W1 = embed(leaves["emb.W_e"], ids1)
    W2 = embed(leaves["emb.W_e"], ids2)
    back1 = model.map_soft(leaves, model.map_soft(leaves, W1, "g1", tau), "g2", tau)
    back2 = model.map_soft(leaves, model.map_soft(leaves, W2, "g2", tau), "g1", tau)
    return (l1_feature_distance(model.features(leaves, back1, "f1"), model.features(leaves, W1, "f1"))
            + l1_feature_distance(model.features(leaves, back2, "f2"), model.features(leaves, W2, "f2")))


def cipher_adv_loss(model: CipherModel, leaves: Mapping, ids1, ids2, tau: float,
                    solver: SolverConfig = SolverConfig.training()):
    """FMD(G2(x2), x1) under F1 plus FMD(G1(x1), x2) under F2; returns ``(value, plans)``."""
    _check_batches(ids1, ids2)
    W1 = embed(leaves["emb.W_e"], ids1)
    W2 = embed(leaves["emb.W_e"], ids2)
    pairs = (
        (model.features(leaves, model.map_soft(leaves, W2, "g2", tau), "f1"), model.features(leaves, W1, "f1")),
        (model.features(leaves, model.map_soft(leaves, W1, "g1", tau), "f2"), model.features(leaves, W2, "f2")),
    )
    return fmd_sum(pairs, solver)


def cipher_objective(model: CipherModel, leaves: Mapping, ids1, ids2, lam: float, tau: float,
                     solver: SolverConfig = SolverConfig.training()) -> nd.Tensor:
    if not lam >= 0:
        raise ConfigError("lam must be >= 0")
    cyc = cycle_loss(model, leaves, ids1, ids2, tau)
    if lam == 0:
        return cyc
    adv, _ = cipher_adv_loss(model, leaves, ids1, ids2, tau, solver)
    return cyc + lam * adv


def mapping_accuracy(deciphered: np.ndarray, plaintext: np.ndarray) -> float:
    """Share of non-PAD plaintext tokens recovered exactly."""
    plaintext = np.asarray(plaintext)
    mask = plaintext != PAD
    return float((np.asarray(deciphered)[mask] == plaintext[mask]).mean())


# ---------------------------------------------------------------- toy tasks


@dataclass
class StyleTask:
    chains: Tuple[MarkovChain, MarkovChain]
    train: Tuple[Corpus, Corpus]
    test: Tuple[Corpus, Corpus]


@dataclass
class CipherTask:
    key: np.ndarray            # plaintext id -> cipher id
    plain_train: Corpus
    cipher_train: Corpus
    plain_test: Corpus
    cipher_test: Corpus


def style_task(states: int = 20, branching: int = 4, L: int = 12, train_size: int = 5000,
               test_size: int = 500, seed: int = 0) -> StyleTask:
    """Two random chains over the same state names; each chain is one style."""
    chains = (MarkovChain.random(states, branching, seed), MarkovChain.random(states, branching, seed + 1))
    train = tuple(synth_corpus(ch, train_size, L, seed + 100 + i, "train") for i, ch in enumerate(chains))
    test = tuple(synth_corpus(ch, test_size, L, seed + 200 + i, "test") for i, ch in enumerate(chains))
    return StyleTask(chains, train, test)


def apply_key(key: np.ndarray, ids: np.ndarray) -> np.ndarray:
    return np.asarray(key)[np.asarray(ids)]


def cipher_task(states: int = 20, branching: int = 4, L: int = 12, train_size: int = 5000,
                test_size: int = 500, seed: int = 0) -> CipherTask:
    """Substitution cipher of a chain corpus under a random permutation of the content ids.

    The two training corpora come from different samples, so no sentence is
    seen in both plaintext and cipher form.
    """
    chain = MarkovChain.random(states, branching, seed)
    vocab = chain_vocab(chain)
    rng = np.random.default_rng(seed + 300)
    r = len(RESERVED)
    key = np.arange(len(vocab))
    key[r:] = r + rng.permutation(states)
    plain = synth_corpus(chain, train_size, L, seed + 100, "train")
    other = synth_corpus(chain, train_size, L, seed + 101, "train")
    plain_test = synth_corpus(chain, test_size, L, seed + 200, "test")
    cipher = Corpus(apply_key(key, other.sequences), vocab, "cipher", "train")
    cipher_test = Corpus(apply_key(key, plain_test.sequences), vocab, "cipher", "test")
    return CipherTask(key, plain, cipher, plain_test, cipher_test)


# ---------------------------------------------------------------- training


class EpochSampler:
    """Batches without replacement within an epoch, reshuffled per epoch."""

    def __init__(self, size: int, batch: int, rng: np.random.Generator):
        if size < batch:
            raise InputError(f"dataset has {size} sentences, fewer than batch size {batch}")
        self.size, self.batch, self.rng = size, batch, rng
        self.order = rng.permutation(size)
        self.cursor = 0

    def next(self) -> np.ndarray:
        if self.cursor + self.batch > self.size:
            self.order = self.rng.permutation(self.size)
            self.cursor = 0
        idx = self.order[self.cursor:self.cursor + self.batch]
        self.cursor += self.batch
        return idx


class _CondTrainer:
    """Alternating critic ascent / min-player descent over two corpora."""

    extra_columns: Tuple[str, ...] = ()

    def __init__(self, cfg: CondConfig, corpora: Tuple[Corpus, Corpus], params: Params,
                 critic_names, cfg_hash: str = ""):
        for c in corpora:
            if c.length != cfg.seq_len:
                raise ConfigError(f"corpus length {c.length} does not match seq_len {cfg.seq_len}")
        self.cfg = cfg
        self.cfg_hash = cfg_hash
        self.solver = cfg.solver()
        self.corpora = corpora
        self.params = params
        critic = set(critic_names)
        if cfg.embedding_owner == "critic":
            critic.add("emb.W_e")
        self.critic_names = tuple(sorted(critic))
        frozen = {"emb.W_e"} if cfg.embedding_owner == "frozen" else set()
        self.min_names = tuple(sorted(k for k in params if k not in critic | frozen))
        self.critic_opt = AdamState()
        self.min_opt = AdamState()
        self.rng = np.random.default_rng(cfg.seed + 1)
        self.samplers = [EpochSampler(len(c), cfg.batch_size, self.rng) for c in corpora]
        self.iteration = 0
        self.history = TrainHistory()
        self._t0 = time.perf_counter()

    def sample_batch(self) -> Tuple[np.ndarray, np.ndarray]:
        return tuple(c.sequences[s.next()] for c, s in zip(self.corpora, self.samplers))

    # subclasses supply these
    def critic_objective(self, leaves, ids1, ids2):
        raise NotImplementedError

    def min_objective(self, leaves, ids1, ids2):
        raise NotImplementedError

    def evaluate(self) -> MetricRecord:
        raise NotImplementedError

    def _wall(self) -> float:
        return round((time.perf_counter() - self._t0) * 1000.0, 3)

    def _descend(self, names, loss, opt, lr, sign):
        grads = nd.backward(self._tape, loss)
        grads = {k: sign * grads[k] for k in names}
        if "emb.W_e" in grads:
            grads["emb.W_e"][:, PAD] = 0.0
        clip_by_global_norm(grads, self.cfg.grad_clip)
        adam_step(self.params, grads, opt, lr)
        self.params["emb.W_e"][:, PAD] = 0.0

    def _leaves(self, names):
        self._tape = nd.Tape()
        return {k: (self._tape.leaf(k, v) if k in names else v) for k, v in self.params.items()}

    def critic_update(self, ids1, ids2) -> float:
        leaves = self._leaves(self.critic_names)
        loss, adv, plans, _aux = self.critic_objective(leaves, ids1, ids2)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError("critic: non-finite objective")
        lr = self.cfg.lr if self.cfg.critic_lr is None else self.cfg.critic_lr
        self._descend(self.critic_names, loss, self.critic_opt, lr, -1.0)
        self.history.add(MetricRecord(self.iteration, "critic", adv,
                                      max(marginal_residual(T) for T in plans), wall_ms=self._wall()))
        return value

    def min_update(self, ids1, ids2) -> float:
        leaves = self._leaves(self.min_names)
        loss, adv, plans, aux = self.min_objective(leaves, ids1, ids2)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError("generator: non-finite objective")
        self._descend(self.min_names, loss, self.min_opt, self.cfg.lr, 1.0)
        rec = MetricRecord(self.iteration, "generator", adv,
                           max(marginal_residual(T) for T in plans) if plans else None,
                           wall_ms=self._wall(), **aux)
        self.history.add(rec)
        return value

    def step(self) -> None:
        self.iteration += 1
        for _ in range(self.cfg.critic_steps):
            self.critic_update(*self.sample_batch())
        self.min_update(*self.sample_batch())
        if self.cfg.eval_every and self.iteration % self.cfg.eval_every == 0:
            self.history.add(self.evaluate())

    def run(self, iterations: Optional[int] = None, outdir=None) -> TrainHistory:
        target = self.cfg.iterations if iterations is None else self.iteration + iterations
        while self.iteration < target:
            self.step()
            every = self.cfg.checkpoint_every
            if outdir is not None and every and self.iteration % every == 0:
                self.save(Path(outdir) / f"ckpt_{self.iteration:06d}.bin")
        return self.history

    # -- persistence
    def save(self, path) -> None:
        tensors = dict(self.params)
        for tag, opt in (("critic", self.critic_opt), ("min", self.min_opt)):
            for k in sorted(opt.m):
                tensors[f"adam.{tag}.m.{k}"] = opt.m[k]
                tensors[f"adam.{tag}.v.{k}"] = opt.v[k]
        extra = {
            "iteration": self.iteration,
            "samplers": [{"order": s.order.tolist(), "cursor": s.cursor} for s in self.samplers],
            "rng": self.rng.bit_generator.state,
            "adam_t": {"critic": self.critic_opt.t, "min": self.min_opt.t},
        }
        save_checkpoint(path, tensors, seed=self.cfg.seed, cfg_hash=self.cfg_hash, extra=extra)

    def load(self, path) -> None:
        tensors, manifest = load_checkpoint(path)
        extra = manifest["extra"]
        for k in self.params:
            if k not in tensors or tensors[k].shape != self.params[k].shape:
                raise InputError(f"checkpoint does not match the model at {k!r}")
            self.params[k][...] = tensors[k]
        for tag, opt in (("critic", self.critic_opt), ("min", self.min_opt)):
            pre = f"adam.{tag}."
            opt.m = {k[len(pre) + 2:]: v.copy() for k, v in tensors.items() if k.startswith(pre + "m.")}
            opt.v = {k[len(pre) + 2:]: v.copy() for k, v in tensors.items() if k.startswith(pre + "v.")}
            opt.t = int(extra["adam_t"][tag])
        self.iteration = int(extra["iteration"])
        for s, st in zip(self.samplers, extra["samplers"]):
            s.order = np.asarray(st["order"], dtype=np.int64)
            s.cursor = int(st["cursor"])
        self.rng.bit_generator.state = extra["rng"]


class StyleTrainer(_CondTrainer):
    extra_columns = ("nll", "accuracy")

    def __init__(self, cfg: StyleConfig, task: StyleTask, cfg_hash: str = ""):
        self.task = task
        vocab = task.train[0].vocab
        self.model = StyleModel(cfg.net_config(len(vocab)), cfg.style_dim, cfg.seed)
        super().__init__(cfg, task.train, self.model.params, self.model.critic_names, cfg_hash)

    def critic_objective(self, leaves, ids1, ids2):
        adv, plans = style_adv_loss(self.model, leaves, ids1, ids2, self.cfg.tau, self.solver)
        return adv, adv.item(), plans, {}

    def min_objective(self, leaves, ids1, ids2):
        m = self.model
        rec = reconstruction_loss(m, leaves, ids1, ids2)
        aux = {"nll": rec.item() / 2.0}
        if self.cfg.lam == 0:
            return rec, None, [], aux
        adv, plans = style_adv_loss(m, leaves, ids1, ids2, self.cfg.tau, self.solver)
        return rec + self.cfg.lam * adv, adv.item(), plans, aux

    def heldout_nll(self) -> Tuple[float, float]:
        """Per-token reconstruction NLL on each style's test split."""
        ids = [c.sequences[:self.cfg.eval_size] for c in self.task.test]
        return tuple(style_nll(self.model, self.params, x, c).item() for c, x in enumerate(ids))

    def transfer_accuracy(self) -> float:
        ch = self.task.chains
        ids = [c.sequences[:self.cfg.eval_size] for c in self.task.test]
        acc12 = transfer_accuracy(self.model.transfer_hard(ids[0], 0, 1), ch[1], ch[0])
        acc21 = transfer_accuracy(self.model.transfer_hard(ids[1], 1, 0), ch[0], ch[1])
        return (acc12 + acc21) / 2.0

    def evaluate(self) -> MetricRecord:
        return MetricRecord(self.iteration, "eval", nll=max(self.heldout_nll()),
                            accuracy=self.transfer_accuracy(), wall_ms=self._wall())


class CipherTrainer(_CondTrainer):
    extra_columns = ("cycle", "accuracy")

    def __init__(self, cfg: CipherConfig, task: CipherTask, cfg_hash: str = ""):
        self.task = task
        vocab = task.plain_train.vocab
        self.model = CipherModel(cfg.net_config(len(vocab)), cfg.seed)
        super().__init__(cfg, (task.plain_train, task.cipher_train), self.model.params,
                         self.model.critic_names, cfg_hash)

    def critic_objective(self, leaves, ids1, ids2):
        m, cfg = self.model, self.cfg
        adv, plans = cipher_adv_loss(m, leaves, ids1, ids2, cfg.tau, self.solver)
        loss = cfg.lam * adv
        if cfg.critic_cycle:
            loss = loss + cycle_loss(m, leaves, ids1, ids2, cfg.tau)
        return loss, adv.item(), plans, {}

    def min_objective(self, leaves, ids1, ids2):
        m, cfg = self.model, self.cfg
        cyc = cycle_loss(m, leaves, ids1, ids2, cfg.tau)
        aux = {"cycle": cyc.item()}
        if cfg.lam == 0:
            return cyc, None, [], aux
        adv, plans = cipher_adv_loss(m, leaves, ids1, ids2, cfg.tau, self.solver)
        return cyc + cfg.lam * adv, adv.item(), plans, aux

    def accuracy(self) -> float:
        cipher = self.task.cipher_test.sequences[:self.cfg.eval_size]
        plain = self.task.plain_test.sequences[:self.cfg.eval_size]
        return mapping_accuracy(self.model.map_hard(cipher, "g2"), plain)

    def evaluate(self) -> MetricRecord:
        return MetricRecord(self.iteration, "eval", accuracy=self.accuracy(), wall_ms=self._wall())
