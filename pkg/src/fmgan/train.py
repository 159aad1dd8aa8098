"""Alternating FMD min-max training.

Each outer iteration runs ``critic_steps`` updates of the feature extractor
(ascending the FMD between real and generated features), then one update of
the generator (descending it). The transport plan is solved off-tape for
every evaluation, so gradients only flow through the cost matrix.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import ndgrad as nd
from .errors import ConfigError, InputError, NumericError
from .fmd import fmd_loss
from .nets import (NetConfig, extract_features, generate_hard, generate_soft, init_params,
                   load_checkpoint, net_config_dict, save_checkpoint)
from .ot import SolverConfig, marginal_residual
from .textdata import (PAD, Corpus, MarkovChain, bigram_tv, embed, self_bleu, synth_corpus,
                       test_bleu)

ADAM_B1 = 0.5
ADAM_B2 = 0.999
ADAM_EPS = 1e-8

METRIC_COLUMNS = ("iter", "phase", "fmd", "residual", "bleu2", "bleu3",
                  "selfbleu2", "selfbleu3", "wall_ms")


@dataclass
class TrainConfig:
    # optimisation
    batch_size: int = 64
    lr: float = 1e-4
    critic_lr: Optional[float] = None
    iterations: int = 2000
    critic_steps: int = 5
    tau: float = 0.1
    tau_final: Optional[float] = None
    grad_clip: float = 5.0
    embedding_owner: str = "critic"
    reuse_batch: bool = False
    seed: int = 0
    # transport solver inside the loop
    beta: float = 0.5
    inner_k: int = 1
    ipot_iters: int = 100
    # networks
    seq_len: int = 12
    emb_dim: int = 64
    hidden: int = 128
    noise_dim: int = 32
    windows: Tuple[int, ...] = (3, 4, 5)
    filters: int = 32
    activation: str = "tanh"
    # logging
    heldout_every: int = 10
    heldout_size: int = 256
    eval_every: int = 250
    eval_samples: int = 500
    checkpoint_every: int = 0

    def __post_init__(self):
        self.windows = tuple(int(w) for w in self.windows)
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.critic_steps < 1:
            raise ConfigError("critic_steps must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.critic_lr is not None and not self.critic_lr >= 0:
            raise ConfigError("critic_lr must be >= 0")
        if not (self.lr >= 0 and self.tau > 0 and self.beta > 0 and self.grad_clip > 0):
            raise ConfigError("lr must be >= 0; tau, beta and grad_clip must be positive")
        if self.tau_final is not None and not self.tau_final > 0:
            raise ConfigError("tau_final must be positive")
        if self.embedding_owner not in ("critic", "generator"):
            raise ConfigError("embedding_owner must be 'critic' or 'generator'")

    def net_config(self, vocab_size: int) -> NetConfig:
        return NetConfig(vocab_size=vocab_size, seq_len=self.seq_len, emb_dim=self.emb_dim,
                         hidden=self.hidden, noise_dim=self.noise_dim, windows=self.windows,
                         filters=self.filters, activation=self.activation)

    def solver(self) -> SolverConfig:
        return SolverConfig.training(self.beta, self.inner_k, self.ipot_iters)

    def tau_at(self, itr: int) -> float:
        if self.tau_final is None or self.iterations <= 1:
            return self.tau
        frac = min(max((itr - 1) / (self.iterations - 1), 0.0), 1.0)
        return self.tau + frac * (self.tau_final - self.tau)


# ---------------------------------------------------------------- optimiser


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              lr: float) -> Dict[str, np.ndarray]:
    """In-place Adam update (beta1 0.5, beta2 0.999, eps 1e-8, bias-corrected) of the params in ``grads``."""
    state.t += 1
    c1 = 1.0 - ADAM_B1 ** state.t
    c2 = 1.0 - ADAM_B2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ConfigError(f"optimizer state for {name} has shape {m.shape}, param {p.shape}")
        m *= ADAM_B1
        m += (1.0 - ADAM_B1) * g
        v *= ADAM_B2
        v += (1.0 - ADAM_B2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return params


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------- history


@dataclass
class MetricRecord:
    iter: int
    phase: str
    fmd: Optional[float] = None
    residual: Optional[float] = None
    bleu2: Optional[float] = None
    bleu3: Optional[float] = None
    selfbleu2: Optional[float] = None
    selfbleu3: Optional[float] = None
    wall_ms: float = 0.0
    # conditional tasks only; written as extra CSV columns
    nll: Optional[float] = None
    cycle: Optional[float] = None
    accuracy: Optional[float] = None


@dataclass
class TrainHistory:
    records: List[MetricRecord] = field(default_factory=list)

    def add(self, rec: MetricRecord) -> None:
        if self.records and rec.iter < self.records[-1].iter:
            raise ValueError("history iterations must not go backwards")
        for name in ("fmd", "residual", "nll", "cycle"):
            val = getattr(rec, name)
            if val is not None and not np.isfinite(val):
                raise NumericError(f"non-finite {name} at iteration {rec.iter}")
        self.records.append(rec)

    def phase(self, name: str) -> List[MetricRecord]:
        return [r for r in self.records if r.phase == name]

    def rows(self, with_wall: bool = True) -> List[list]:
        cols = METRIC_COLUMNS if with_wall else METRIC_COLUMNS[:-1]
        out = []
        for r in self.records:
            row = []
            for c in cols:
                val = getattr(r, c)
                row.append("" if val is None else (repr(val) if isinstance(val, float) else val))
            out.append(row)
        return out

    def write_csv(self, path, extra_columns: Tuple[str, ...] = ()) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRIC_COLUMNS + tuple(extra_columns))
            for rec, row in zip(self.records, self.rows()):
                w.writerow(row + ["" if getattr(rec, c, None) is None else repr(getattr(rec, c))
                                  for c in extra_columns])


# ---------------------------------------------------------------- trainer


class Trainer:
    """Owns parameters, optimiser states, the RNG and the epoch order.

    Parameter partition: the critic owns ``ext.*`` (and ``emb.W_e`` by
    default), the generator owns ``gen.*``.
    """

    def __init__(self, cfg: TrainConfig, train: Corpus, heldout: Optional[Corpus] = None,
                 cfg_hash: str = ""):
        if len(train) < cfg.batch_size:
            raise InputError(f"dataset has {len(train)} sentences, fewer than batch size {cfg.batch_size}")
        if train.length != cfg.seq_len:
            raise ConfigError(f"corpus length {train.length} does not match seq_len {cfg.seq_len}")
        self.cfg = cfg
        self.train_corpus = train
        self.heldout_corpus = heldout if heldout is not None else train
        self.cfg_hash = cfg_hash
        self.net = cfg.net_config(len(train.vocab))
        self.solver = cfg.solver()
        self.params = init_params(self.net, cfg.seed)
        owner = cfg.embedding_owner
        self.critic_names = sorted(k for k in self.params
                                   if k.startswith("ext.") or (k == "emb.W_e" and owner == "critic"))
        self.generator_names = sorted(k for k in self.params
                                      if k.startswith("gen.") or (k == "emb.W_e" and owner == "generator"))
        self.critic_opt = AdamState()
        self.generator_opt = AdamState()
        self.rng = np.random.default_rng(cfg.seed + 1)
        self.order = self.rng.permutation(len(train))
        self.cursor = 0
        self.iteration = 0
        self.history = TrainHistory()
        eval_rng = np.random.default_rng(cfg.seed + 2)
        ho = self.heldout_corpus.sequences
        take = min(cfg.heldout_size, len(ho))
        self.heldout_ids = ho[eval_rng.choice(len(ho), take, replace=False)]
        self.heldout_z = eval_rng.normal(size=(take, cfg.noise_dim))
        self.eval_z = eval_rng.normal(size=(cfg.eval_samples, cfg.noise_dim))
        self._t0 = time.perf_counter()

    # -- data
    def sample_batch(self) -> Tuple[np.ndarray, np.ndarray]:
        n = self.cfg.batch_size
        if self.cursor + n > len(self.order):
            self.order = self.rng.permutation(len(self.train_corpus))
            self.cursor = 0
        ids = self.train_corpus.sequences[self.order[self.cursor:self.cursor + n]]
        self.cursor += n
        z = self.rng.normal(size=(n, self.cfg.noise_dim))
        return ids, z

    # -- objective
    def objective(self, leaves: Dict, real_ids: np.ndarray, z: np.ndarray, tau: float):
        """FMD between real and generated features; returns (scalar tensor, plan)."""
        W_e = leaves["emb.W_e"]
        net = self.net
        real = extract_features(embed(W_e, real_ids), leaves, net.windows, activation=net.activation)
        fake = extract_features(generate_soft(z, net.seq_len, tau, leaves), leaves, net.windows,
                                activation=net.activation)
        return fmd_loss(real, fake, self.solver)

    def _update(self, names, real_ids, z, sign: float, opt: AdamState, phase: str, lr: float):
        tape = nd.Tape()
        leaves = {k: (tape.leaf(k, v) if k in names else v) for k, v in self.params.items()}
        loss, T = self.objective(leaves, real_ids, z, self.cfg.tau_at(self.iteration))
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"{phase}: non-finite FMD")
        grads = nd.backward(tape, loss)
        grads = {k: sign * grads[k] for k in names}
        if "emb.W_e" in grads:
            grads["emb.W_e"][:, PAD] = 0.0
        clip_by_global_norm(grads, self.cfg.grad_clip)
        adam_step(self.params, grads, opt, lr)
        self.params["emb.W_e"][:, PAD] = 0.0
        res = marginal_residual(T)
        self.history.add(MetricRecord(self.iteration, phase, value, res, wall_ms=self._wall()))
        return value

    def critic_update(self, real_ids, z) -> float:
        """One ascent step on the critic's parameters; returns the FMD before the step."""
        return self._update(self.critic_names, real_ids, z, -1.0, self.critic_opt, "critic",
                            self.cfg.lr if self.cfg.critic_lr is None else self.cfg.critic_lr)

    def generator_update(self, real_ids, z) -> float:
        """One descent step on the generator's parameters; returns the FMD before the step."""
        return self._update(self.generator_names, real_ids, z, 1.0, self.generator_opt, "generator",
                            self.cfg.lr)

    def _wall(self) -> float:
        return round((time.perf_counter() - self._t0) * 1000.0, 3)

    # -- loop
    def step(self) -> None:
        self.iteration += 1
        batch = None
        for _ in range(self.cfg.critic_steps):
            batch = self.sample_batch()
            self.critic_update(*batch)
        if not self.cfg.reuse_batch:
            batch = self.sample_batch()
        self.generator_update(*batch)
        it = self.iteration
        if self.cfg.heldout_every and it % self.cfg.heldout_every == 0:
            self.history.add(MetricRecord(it, "heldout", *self.heldout_fmd(), wall_ms=self._wall()))
        if self.cfg.eval_every and it % self.cfg.eval_every == 0:
            self.history.add(self.evaluate())

    def run(self, iterations: Optional[int] = None, outdir: Optional[Path] = None) -> TrainHistory:
        target = self.cfg.iterations if iterations is None else self.iteration + iterations
        while self.iteration < target:
            self.step()
            every = self.cfg.checkpoint_every
            if outdir is not None and every and self.iteration % every == 0:
                self.save(Path(outdir) / f"ckpt_{self.iteration:06d}.bin")
        return self.history

    # -- evaluation
    def heldout_fmd(self) -> Tuple[float, float]:
        loss, T = self.objective(self.params, self.heldout_ids, self.heldout_z,
                                 self.cfg.tau_at(self.iteration))
        return loss.item(), marginal_residual(T)

    def sample(self, z: Optional[np.ndarray] = None) -> np.ndarray:
        z = self.eval_z if z is None else z
        return generate_hard(z, self.net.seq_len, self.params)

    def evaluate(self) -> MetricRecord:
        samples = self.sample()
        refs = self.heldout_corpus
        return MetricRecord(
            self.iteration, "eval",
            bleu2=test_bleu(samples, refs, 2), bleu3=test_bleu(samples, refs, 3),
            selfbleu2=self_bleu(samples, 2), selfbleu3=self_bleu(samples, 3),
            wall_ms=self._wall())

    # -- persistence
    def state_tensors(self) -> Dict[str, np.ndarray]:
        out = dict(self.params)
        for tag, opt in (("critic", self.critic_opt), ("generator", self.generator_opt)):
            for k in sorted(opt.m):
                out[f"adam.{tag}.m.{k}"] = opt.m[k]
                out[f"adam.{tag}.v.{k}"] = opt.v[k]
        return out

    def save(self, path) -> None:
        extra = {
            "iteration": self.iteration,
            "cursor": self.cursor,
            "order": self.order.tolist(),
            "rng": self.rng.bit_generator.state,
            "adam_t": {"critic": self.critic_opt.t, "generator": self.generator_opt.t},
            "net": net_config_dict(self.net),
        }
        save_checkpoint(path, self.state_tensors(), seed=self.cfg.seed,
                        cfg_hash=self.cfg_hash, extra=extra)

    def load(self, path) -> None:
        tensors, manifest = load_checkpoint(path)
        extra = manifest["extra"]
        for k in self.params:
            if k not in tensors or tensors[k].shape != self.params[k].shape:
                raise InputError(f"checkpoint does not match the network at {k!r}")
            self.params[k] = tensors[k].copy()
        for tag, opt in (("critic", self.critic_opt), ("generator", self.generator_opt)):
            pre = f"adam.{tag}."
            opt.m = {k[len(pre) + 2:]: v.copy() for k, v in tensors.items() if k.startswith(pre + "m.")}
            opt.v = {k[len(pre) + 2:]: v.copy() for k, v in tensors.items() if k.startswith(pre + "v.")}
            opt.t = int(extra["adam_t"][tag])
        self.iteration = int(extra["iteration"])
        self.cursor = int(extra["cursor"])
        self.order = np.asarray(extra["order"], dtype=np.int64)
        self.rng.bit_generator.state = extra["rng"]


def toy_corpora(states: int = 20, branching: int = 4, L: int = 12, train_size: int = 10000,
                test_size: int = 1000, seed: int = 0) -> Tuple[Corpus, Corpus]:
    """Train/test corpora sampled from one random sparse Markov chain."""
    chain = MarkovChain.random(states, branching, seed)
    return (synth_corpus(chain, train_size, L, seed + 100, "train"),
            synth_corpus(chain, test_size, L, seed + 200, "test"))


def train(cfg: TrainConfig, train_corpus: Optional[Corpus] = None,
          test_corpus: Optional[Corpus] = None, outdir=None) -> TrainHistory:
    """Run the full loop; with no corpus given, trains on the built-in toy chain."""
    if train_corpus is None:
        train_corpus, test_corpus = toy_corpora(L=cfg.seq_len, seed=cfg.seed)
    trainer = Trainer(cfg, train_corpus, test_corpus)
    return trainer.run(outdir=outdir)


def generation_report(trainer: Trainer, samples: Optional[np.ndarray] = None) -> dict:
    """Quality/diversity numbers for the trainer's current generator."""
    samples = trainer.sample() if samples is None else samples
    refs = trainer.heldout_corpus
    out = {
        "bleu2": test_bleu(samples, refs, 2),
        "selfbleu2": self_bleu(samples, 2),
    }
    if trainer.train_corpus.chain is not None:
        out["bigram_tv"] = bigram_tv(samples, trainer.train_corpus.chain)
    return out

