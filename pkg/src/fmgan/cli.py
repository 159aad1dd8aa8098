"""Command-line entry point.

Configuration is flat ``key = value`` text. A key may carry a section
prefix (``train.lr``, ``solver.beta``); an unprefixed key belongs to the
running command. Values resolve as defaults < config file < ``FMD_SEED``
(seed only) < ``--key value`` flags. Every run writes ``resolved.cfg`` and
``metrics.csv`` under ``--outdir``.

Exit codes: 0 success, 2 configuration, 3 input, 4 numeric.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import condext, train as train_mod
from .errors import ConfigError, FmganError, InputError
from .nets import NetConfig, config_hash, generate_hard, load_checkpoint
from .ot import (ORACLE_MAX_N, SolverConfig, cosine_cost_matrix, exact_emd_oracle, ipot,
                 marginal_residual, sinkhorn, transport_value)
from .plot import save_plot
from .textdata import (Corpus, Vocab, build_vocab, decode, load_corpus, read_lines, self_bleu,
                       test_bleu, tokenize)

SOLVER_KEYS = ("beta", "inner_k", "ipot_iters")


# ---------------------------------------------------------------- schemas


def _dataclass_schema(cls, skip: Sequence[str] = ()) -> Dict[str, Tuple[str, object]]:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        t = str(f.type)
        kind = ("ints" if "Tuple" in t else "bool" if t == "bool" else
                "int" if t == "int" else "float" if "float" in t else "str")
        out[f.name] = (kind, f.default)
    return out


def _toy_keys(train_size: int, test_size: int) -> Dict[str, Tuple[str, object]]:
    return {
        "toy_states": ("int", 20),
        "toy_branching": ("int", 4),
        "toy_train_size": ("int", train_size),
        "toy_test_size": ("int", test_size),
    }


def _schemas() -> Dict[str, Dict[str, Tuple[str, object]]]:
    train = _dataclass_schema(train_mod.TrainConfig)
    train.update(_toy_keys(10000, 1000))
    train.update({"train_file": ("path", None), "test_file": ("path", None),
                  "min_count": ("int", 1), "vocab_cap": ("int", 0), "resume": ("path", None)})
    style = _dataclass_schema(condext.StyleConfig)
    style.update(_toy_keys(5000, 500))
    cipher = _dataclass_schema(condext.CipherConfig)
    cipher.update(_toy_keys(5000, 500))
    return {
        "train": train,
        "style": style,
        "cipher": cipher,
        "generate": {"checkpoint": ("path", None), "vocab": ("path", None), "n": ("int", 10),
                     "seed": ("int", 0)},
        "eval": {"candidates": ("path", None), "references": ("path", None)},
        "bench": {"n": ("int", 8), "instances": ("int", 1), "dim": ("int", 16),
                  "cost_file": ("path", None), "beta": ("float", 0.5), "inner_k": ("int", 1),
                  "outer_iters": ("int", 2000), "tol": ("float", 1e-6), "eps": ("float", 0.05),
                  "sinkhorn_iters": ("int", 2000), "seed": ("int", 0)},
    }


COMMAND_SECTION = {"train": "train", "style-train": "style", "cipher-train": "cipher",
                   "generate": "generate", "eval": "eval", "ot-bench": "bench"}
# solver settings may be written under their own section for the training commands
SHARED = {"solver": SOLVER_KEYS}


def _coerce(key: str, kind: str, raw: str, nullable: bool = True):
    text = raw.strip()
    try:
        if text.lower() in ("none", ""):
            if nullable:
                return None
            raise ValueError(text)
        if kind in ("path", "str"):
            return text
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "ints":
            return tuple(int(p) for p in text.replace(",", " ").split())
    except ValueError:
        pass
    raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {kind}")


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclasses.dataclass
class RunConfig:
    command: str
    section: str
    values: Dict[str, object]
    outdir: Path

    def text(self) -> str:
        return "".join(f"{self.section}.{k} = {_format(v)}\n" for k, v in sorted(self.values.items()))

    def hash(self) -> str:
        return config_hash(self.text())

    def pick(self, cls, **extra):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in self.values.items() if k in names}, **extra)


def _resolve_key(raw: str, section: str, schemas) -> Tuple[Optional[str], str]:
    """Map a written key to ``(section or None if foreign, key)``; unknown keys raise."""
    key = raw.strip().replace("-", "_")
    if "." in key:
        prefix, name = key.split(".", 1)
        prefix = prefix.replace("_", "-")
        prefix = COMMAND_SECTION.get(prefix, prefix)
        if prefix in SHARED and name in SHARED[prefix]:
            return (section if name in schemas[section] else None), name
        if prefix not in schemas or name not in schemas[prefix]:
            raise ConfigError(f"unknown config key {raw.strip()!r}")
        return (section if prefix == section else None), name
    if key not in schemas[section]:
        raise ConfigError(f"unknown config key {raw.strip()!r}")
    return section, key


def parse_config(command: str, config_path=None, flags: Sequence[Tuple[str, str]] = (),
                 outdir=None, environ=None) -> RunConfig:
    """Resolve defaults, file, ``FMD_SEED`` and flag values for one command."""
    if command not in COMMAND_SECTION:
        raise ConfigError(f"unknown command {command!r}")
    environ = os.environ if environ is None else environ
    schemas = _schemas()
    section = COMMAND_SECTION[command]
    schema = schemas[section]
    values = {k: default for k, (_kind, default) in schema.items()}

    def assign(raw_key, raw_value):
        sec, key = _resolve_key(raw_key, section, schemas)
        if sec is None:
            return
        kind, default = schema[key]
        values[key] = _coerce(key, kind, raw_value, nullable=default is None)

    if config_path is not None:
        p = Path(config_path)
        if not p.is_file():
            raise InputError(f"config file not found: {p}")
        for n, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{p}:{n}: expected key = value, got {raw!r}")
            assign(key, value)
    if environ.get("FMD_SEED") and "seed" in schema:
        values["seed"] = _coerce("FMD_SEED", "int", environ["FMD_SEED"], nullable=False)
    for key, value in flags:
        assign(key, value)
    return RunConfig(command, section, values, Path(outdir or "runs/" + command))


# ---------------------------------------------------------------- commands


def _write_history(outdir: Path, history: train_mod.TrainHistory, extra: Tuple[str, ...] = ()) -> None:
    history.write_csv(outdir / "metrics.csv", extra)


def _fmd_plot(outdir: Path, history: train_mod.TrainHistory, title: str) -> None:
    series = {}
    for phase in ("critic", "generator", "heldout"):
        recs = [r for r in history.phase(phase) if r.fmd is not None]
        if recs:
            series[phase] = ([r.iter for r in recs], [r.fmd for r in recs])
    save_plot(outdir / "fmd.svg", series, title=title, xlabel="iteration", ylabel="FMD")


def _load_train_corpora(rc: RunConfig) -> Tuple[Corpus, Corpus]:
    v = rc.values
    if v["train_file"] is None:
        return train_mod.toy_corpora(v["toy_states"], v["toy_branching"], v["seq_len"],
                                     v["toy_train_size"], v["toy_test_size"], v["seed"])
    for key in ("train_file", "test_file"):
        if v[key] is not None and not Path(v[key]).is_file():
            raise ConfigError(f"config key {key!r}: no such file {v[key]}")
    vocab = build_vocab(read_lines(v["train_file"]), v["min_count"], v["vocab_cap"] or None)
    tr = load_corpus(v["train_file"], vocab, v["seq_len"], "train")
    te = load_corpus(v["test_file"], vocab, v["seq_len"], "test") if v["test_file"] else None
    return tr, te


def cmd_train(rc: RunConfig) -> int:
    out = rc.outdir
    cfg = rc.pick(train_mod.TrainConfig)
    tr, te = _load_train_corpora(rc)
    tr.vocab.save(out / "vocab.txt")
    trainer = train_mod.Trainer(cfg, tr, te, cfg_hash=rc.hash())
    if rc.values["resume"]:
        trainer.load(rc.values["resume"])
    history = trainer.run(outdir=out)
    trainer.save(out / "final.bin")
    _write_history(out, history)
    _fmd_plot(out, history, "critic and generator FMD")
    evals = [r for r in history.phase("eval") if r.bleu2 is not None]
    if evals:
        with open(out / "quality_diversity.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("iter", "bleu2", "bleu3", "selfbleu2", "selfbleu3"))
            for r in evals:
                w.writerow((r.iter, repr(r.bleu2), repr(r.bleu3), repr(r.selfbleu2), repr(r.selfbleu3)))
        save_plot(out / "quality_diversity.svg",
                  {"n=2": ([r.bleu2 for r in evals], [r.selfbleu2 for r in evals]),
                   "n=3": ([r.bleu3 for r in evals], [r.selfbleu3 for r in evals])},
                  title="quality vs diversity", xlabel="test-BLEU", ylabel="self-BLEU", markers=True)
    report = train_mod.generation_report(trainer)
    print(" ".join(f"{k}={v:.4f}" for k, v in report.items()))
    return 0


def _cond_run(rc: RunConfig, trainer, title: str) -> int:
    history = trainer.run(outdir=rc.outdir)
    trainer.save(rc.outdir / "final.bin")
    _write_history(rc.outdir, history, trainer.extra_columns)
    _fmd_plot(rc.outdir, history, title)
    final = trainer.evaluate()
    print(" ".join(f"{c}={getattr(final, c):.4f}" for c in trainer.extra_columns
                   if getattr(final, c) is not None))
    return 0


def cmd_style(rc: RunConfig) -> int:
    v = rc.values
    cfg = rc.pick(condext.StyleConfig)
    task = condext.style_task(v["toy_states"], v["toy_branching"], cfg.seq_len,
                              v["toy_train_size"], v["toy_test_size"], cfg.seed)
    return _cond_run(rc, condext.StyleTrainer(cfg, task, rc.hash()), "style transfer FMD")


def cmd_cipher(rc: RunConfig) -> int:
    v = rc.values
    cfg = rc.pick(condext.CipherConfig)
    task = condext.cipher_task(v["toy_states"], v["toy_branching"], cfg.seq_len,
                               v["toy_train_size"], v["toy_test_size"], cfg.seed)
    return _cond_run(rc, condext.CipherTrainer(cfg, task, rc.hash()), "decipher FMD")


def _require(rc: RunConfig, key: str):
    if rc.values[key] is None:
        raise ConfigError(f"config key {key!r} is required for {rc.command}")
    return rc.values[key]


def cmd_generate(rc: RunConfig) -> int:
    ckpt = Path(_require(rc, "checkpoint"))
    tensors, manifest = load_checkpoint(ckpt)
    net_dict = manifest.get("extra", {}).get("net")
    if not net_dict:
        raise InputError(f"{ckpt} has no generator configuration")
    net = NetConfig(**net_dict)
    vocab = Vocab.load(rc.values["vocab"] or ckpt.parent / "vocab.txt")
    if len(vocab) != net.vocab_size:
        raise InputError(f"vocabulary has {len(vocab)} entries, checkpoint expects {net.vocab_size}")
    n = rc.values["n"]
    if n < 1:
        raise ConfigError("config key 'n' must be >= 1")
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    z = np.random.default_rng(rc.values["seed"]).normal(size=(n, net.noise_dim))
    ids = generate_hard(z, net.seq_len, params)
    lines = [decode(vocab, row) for row in ids]
    (rc.outdir / "samples.txt").write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    with open(rc.outdir / "metrics.csv", "w", newline="") as fh:
        csv.writer(fh).writerows([("samples",), (n,)])
    print(f"wrote {n} samples to {rc.outdir / 'samples.txt'}")
    return 0


def cmd_eval(rc: RunConfig) -> int:
    cands = [tokenize(l) for l in read_lines(_require(rc, "candidates"))]
    refs = [tokenize(l) for l in read_lines(_require(rc, "references"))]
    cands = [c for c in cands if c]
    refs = [r for r in refs if r]
    row = {"bleu2": test_bleu(cands, refs, 2), "bleu3": test_bleu(cands, refs, 3),
           "selfbleu2": self_bleu(cands, 2) if len(cands) > 1 else None,
           "selfbleu3": self_bleu(cands, 3) if len(cands) > 1 else None}
    with open(rc.outdir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(row)
        w.writerow(["" if v is None else repr(v) for v in row.values()])
    print(" ".join(f"{k}={v:.4f}" for k, v in row.items() if v is not None))
    return 0


def read_cost_matrix(path) -> np.ndarray:
    rows = [line.replace(",", " ").split() for line in read_lines(path) if line.strip()]
    try:
        C = np.array([[float(x) for x in r] for r in rows])
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric cost entry ({exc})") from None
    if C.ndim != 2 or C.size == 0:
        raise InputError(f"{path}: cost rows must all have the same length")
    return C


def cmd_bench(rc: RunConfig) -> int:
    v = rc.values
    out = rc.outdir
    rng = np.random.default_rng(v["seed"])
    if v["cost_file"]:
        costs = [read_cost_matrix(v["cost_file"])]
    else:
        costs = [cosine_cost_matrix(rng.normal(size=(v["dim"], v["n"])), rng.normal(size=(v["dim"], v["n"])))
                 for _ in range(v["instances"])]
    solver = SolverConfig(beta=v["beta"], inner_k=v["inner_k"], outer_iters=v["outer_iters"],
                          marginal_tol=v["tol"])
    summary = []
    plot_series = {}
    for k, C in enumerate(costs):
        square = C.shape[0] == C.shape[1]
        oracle = exact_emd_oracle(C)[1] if square and C.shape[0] <= ORACLE_MAX_N else None
        traces = {"ipot": [], "sinkhorn": []}
        T_ipot = ipot(C, solver, callback=lambda t, T: traces["ipot"].append(
            (t, transport_value(T, C), marginal_residual(T))))
        T_sk, _ = sinkhorn(C, v["eps"], v["sinkhorn_iters"], tol=v["tol"],
                           callback=lambda t, T: traces["sinkhorn"].append(
                               (t, transport_value(T, C), marginal_residual(T))))
        for name, T in (("ipot", T_ipot), ("sinkhorn", T_sk)):
            rows = traces[name]
            with open(out / f"{name}_{k}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(("iter", "value", "residual"))
                w.writerows((t, repr(val), repr(res)) for t, val, res in rows)
            value = transport_value(T, C)
            summary.append((k, name, rows[-1][0], value, marginal_residual(T), oracle,
                            None if oracle is None else value - oracle))
            if k == 0:
                ys = [abs(val - oracle) if oracle is not None else val for _t, val, _r in rows]
                plot_series[name] = ([t for t, _v, _r in rows], ys)
        if oracle is not None:
            summary.append((k, "oracle", 0, oracle, 0.0, oracle, 0.0))
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("instance", "solver", "iterations", "value", "residual", "oracle", "gap"))
        for row in summary:
            w.writerow(["" if x is None else (repr(x) if isinstance(x, float) else x) for x in row])
    has_oracle = summary and summary[0][5] is not None
    save_plot(out / "convergence.svg", plot_series, title="solver convergence (instance 0)",
              xlabel="iteration", ylabel="|value - exact EMD|" if has_oracle else "transport value",
              logy=bool(has_oracle))
    for row in summary:
        print(f"instance {row[0]} {row[1]}: value={row[3]:.6f} residual={row[4]:.2e} iters={row[2]}")
    return 0


COMMANDS = {"train": cmd_train, "style-train": cmd_style, "cipher-train": cmd_cipher,
            "generate": cmd_generate, "eval": cmd_eval, "ot-bench": cmd_bench}


def _split_flags(rest: Sequence[str]) -> List[Tuple[str, str]]:
    flags, i = [], 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}; use --key value")
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(rest):
                raise ConfigError(f"flag {tok!r} needs a value")
            key, value = body, rest[i + 1]
            i += 2
        flags.append((key, value))
    return flags


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fmgan", description="FMD adversarial text generation, conditional tasks and OT solvers.",
        epilog="Any config key can be given as --key value (optionally --section.key value).")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--outdir", help="output directory (default runs/<command>)")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args, rest = ap.parse_known_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else ConfigError.exit_code
    try:
        rc = parse_config(args.command, args.config, _split_flags(rest), args.outdir)
        rc.outdir.mkdir(parents=True, exist_ok=True)
        (rc.outdir / "resolved.cfg").write_text(rc.text(), encoding="utf-8")
        return COMMANDS[args.command](rc)
    except FmganError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
