"""LSTM sentence generator and multi-window CNN feature extractor.

Parameters live in flat ``{name: ndarray}`` dicts so that training code can
put any subset of them on a tape as leaves. Names are prefixed ``emb.``,
``gen.`` and ``ext.``. Every network function accepts either tape leaves or
plain arrays; with arrays it runs eagerly and records nothing.

Batches are batch-first: noise ``[n, z]``, embedded sentences ``[n, k, L]``.
Feature batches come out as ``[d, n]`` (one column per sentence), the layout
:mod:`fmgan.fmd` expects.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from . import ndgrad as nd
from .errors import ConfigError, DimensionError, InputError, ParameterError
from .textdata import BOS, PAD

Params = Dict[str, np.ndarray]

ACTIVATIONS = {
    "tanh": nd.tanh,
    "relu": lambda x: nd.clamp_min(x, 0.0),
}


@dataclass(frozen=True)
class NetConfig:
    vocab_size: int
    seq_len: int = 12
    emb_dim: int = 64
    hidden: int = 128
    noise_dim: int = 32
    windows: Tuple[int, ...] = (3, 4, 5)
    filters: int = 32
    init_scale: float = 0.08
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))
        if max(self.windows) > self.seq_len:
            raise ConfigError(f"window sizes {self.windows} exceed sequence length {self.seq_len}")
        if min(self.vocab_size, self.emb_dim, self.hidden, self.noise_dim, self.filters) < 1:
            raise ConfigError(f"network sizes must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown extractor activation {self.activation!r}")

    @property
    def feature_dim(self) -> int:
        return len(self.windows) * self.filters


def _t(params: Mapping, name: str) -> nd.Tensor:
    return nd.as_tensor(params[name])


# ---------------------------------------------------------------- initialization


def init_embedding(cfg: NetConfig, rng: np.random.Generator) -> Params:
    W_e = rng.normal(0.0, 1.0, size=(cfg.emb_dim, cfg.vocab_size))
    W_e[:, PAD] = 0.0
    return {"emb.W_e": W_e}


def init_lstm(cfg: NetConfig, rng: np.random.Generator, prefix: str = "gen",
              input_dim: Optional[int] = None, cond_dim: Optional[int] = None,
              out_dim: Optional[int] = None) -> Params:
    """LSTM cell weights (gates stacked as input, forget, output, candidate) plus decoder V."""
    k = cfg.emb_dim if input_dim is None else input_dim
    zc = cfg.noise_dim if cond_dim is None else cond_dim
    v = cfg.vocab_size if out_dim is None else out_dim
    h, s = cfg.hidden, cfg.init_scale
    out = {
        f"{prefix}.W": rng.uniform(-s, s, size=(k + zc + h, 4 * h)),
        f"{prefix}.b": np.zeros(4 * h),
    }
    if v:
        out[f"{prefix}.V"] = rng.uniform(-s, s, size=(v, h))
    return out


def init_extractor(cfg: NetConfig, rng: np.random.Generator, prefix: str = "ext") -> Params:
    out = {}
    for l in cfg.windows:
        fan_in = cfg.emb_dim * l
        bound = np.sqrt(6.0 / (fan_in + cfg.filters))
        out[f"{prefix}.conv{l}.W"] = rng.uniform(-bound, bound, size=(fan_in, cfg.filters))
        out[f"{prefix}.conv{l}.b"] = np.zeros(cfg.filters)
    return out


def init_params(cfg: NetConfig, seed: int) -> Params:
    rng = np.random.default_rng(seed)
    params = init_embedding(cfg, rng)
    params.update(init_lstm(cfg, rng))
    params.update(init_extractor(cfg, rng))
    return params


# ---------------------------------------------------------------- generator


def lstm_step(w_prev, h_prev, c_prev, z, params: Mapping, prefix: str = "gen"):
    """One LSTM step with the conditioning vector ``z`` concatenated to the input.

    Returns ``(h, c, logits)``; ``logits`` is ``None`` when the cell has no decoder.
    """
    x = nd.concat([w_prev, z, h_prev], axis=1)
    W = _t(params, f"{prefix}.W")
    if x.shape[1] != W.shape[0]:
        raise DimensionError(f"lstm input width {x.shape[1]} does not match weights {W.shape}")
    gates = x @ W + _t(params, f"{prefix}.b")
    h = h_prev.shape[1]
    i = nd.sigmoid(gates[:, :h])
    f = nd.sigmoid(gates[:, h:2 * h])
    o = nd.sigmoid(gates[:, 2 * h:3 * h])
    g = nd.tanh(gates[:, 3 * h:])
    c = f * c_prev + i * g
    h_new = o * nd.tanh(c)
    logits = None
    if f"{prefix}.V" in params:
        logits = h_new @ nd.transpose(_t(params, f"{prefix}.V"))
    return h_new, c, logits


def _initial_state(z, params, prefix):
    n = z.shape[0]
    h = params[f"{prefix}.W"].shape[1] // 4
    return nd.Tensor(np.zeros((n, h))), nd.Tensor(np.zeros((n, h)))


def _bos(W_e, n):
    return nd.transpose(nd.getitem(W_e, (slice(None), np.full(n, BOS))))


def generate_hard(z, L: int, params: Mapping, prefix: str = "gen",
                  return_logits: bool = False):
    """Greedy decoding: feed back the embedding of the argmax token (lowest id on ties).

    ``z`` is ``[n, z]``; returns ids ``[n, L]`` (and logits ``[n, L, v]`` if asked).
    """
    if L < 1:
        raise ParameterError(f"L must be >= 1, got {L}")
    params = {k: np.asarray(getattr(v, "data", v)) for k, v in params.items()}
    z = nd.Tensor(np.atleast_2d(np.asarray(getattr(z, "data", z))))
    W_e = params["emb.W_e"]
    n = z.shape[0]
    h, c = _initial_state(z, params, prefix)
    w = nd.Tensor(W_e[:, np.full(n, BOS)].T)
    ids = np.empty((n, L), dtype=np.int64)
    all_logits = []
    for t in range(L):
        h, c, a = lstm_step(w, h, c, z, params, prefix)
        ids[:, t] = np.argmax(a.data, axis=1)
        all_logits.append(a.data)
        w = nd.Tensor(W_e[:, ids[:, t]].T)
    if return_logits:
        return ids, np.stack(all_logits, axis=1)
    return ids


def generate_soft(z, L: int, tau: float, params: Mapping, prefix: str = "gen",
                  return_logits: bool = False):
    """Soft-argmax decoding: each step feeds back ``W_e softmax(V h / tau)``.

    Returns the soft embedded sentence ``[n, k, L]``, differentiable in the
    generator weights and ``emb.W_e`` when those are tape leaves.
    """
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if L < 1:
        raise ParameterError(f"L must be >= 1, got {L}")
    z = nd.as_tensor(z)
    if z.ndim == 1:
        z = nd.reshape(z, (1, -1))
    W_e = _t(params, "emb.W_e")
    W_eT = nd.transpose(W_e)
    h, c = _initial_state(z, params, prefix)
    w = _bos(W_e, z.shape[0])
    cols, all_logits = [], []
    for _ in range(L):
        h, c, a = lstm_step(w, h, c, z, params, prefix)
        w = nd.softmax(a, temperature=tau) @ W_eT
        cols.append(w)
        all_logits.append(a.data)
    out = nd.stack(cols, axis=2)
    if return_logits:
        return out, np.stack(all_logits, axis=1)
    return out


# ---------------------------------------------------------------- extractor


def extract_features(W, params: Mapping, windows: Tuple[int, ...], prefix: str = "ext",
                     activation: str = "tanh") -> nd.Tensor:
    """Valid convolution over time per window size, activation, max over time, concatenated.

    ``W`` is ``[n, k, L]`` (returns ``[d, n]``) or a single sentence ``[k, L]``
    (returns ``[d]``).
    """
    W = nd.as_tensor(W)
    single = W.ndim == 2
    if single:
        W = nd.reshape(W, (1,) + W.shape)
    n, k, L = W.shape
    act = ACTIVATIONS[activation]
    pooled = []
    for l in windows:
        if l > L:
            raise ConfigError(f"window {l} longer than sentence length {L}")
        Wc = _t(params, f"{prefix}.conv{l}.W")
        if Wc.shape[0] != k * l:
            raise DimensionError(f"conv{l} expects {Wc.shape[0] // l}-dim embeddings, got {k}")
        win = nd.unfold(W, l)                                          # n, k, L', l
        win = nd.reshape(nd.transpose(win, (0, 2, 1, 3)), (n, L - l + 1, k * l))
        fmap = act(win @ Wc + _t(params, f"{prefix}.conv{l}.b"))   # n, L', d2
        pooled.append(nd.max_over_time(fmap, axis=1))                  # n, d2
    f = nd.transpose(nd.concat(pooled, axis=1))
    return nd.reshape(f, (f.shape[0],)) if single else f


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"FMGAN-CKPT 1\n"


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], seed: int = 0,
                    cfg_hash: str = "", extra: Optional[dict] = None) -> None:
    """Manifest line (JSON) followed by little-endian float64 data in manifest order."""
    arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in tensors.items()}
    manifest = {
        "tensors": [{"name": k, "shape": list(a.shape), "dtype": "<f8"} for k, a in arrays.items()],
        "seed": seed,
        "config_hash": cfg_hash,
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        for a in arrays.values():
            fh.write(a.tobytes())


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"checkpoint not found: {p}")
    with open(p, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise InputError(f"{p} is not a checkpoint file")
        manifest = json.loads(fh.readline())
        tensors = {}
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise InputError(f"{p} is truncated at tensor {entry['name']!r}")
            tensors[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return tensors, manifest


def net_config_dict(cfg: NetConfig) -> dict:
    d = asdict(cfg)
    d["windows"] = list(cfg.windows)
    return d
