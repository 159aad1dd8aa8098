"""Run the style-transfer or decipher toy task and print a few mapped sentences.

    python3 demos/conditional_tasks.py style --iterations 500
    python3 demos/conditional_tasks.py cipher --iterations 1000
"""
import argparse

from fmgan.condext import (CipherConfig, CipherTrainer, StyleConfig, StyleTrainer, cipher_task,
                           style_task)
from fmgan.textdata import decode


def run_style(args):
    cfg = StyleConfig(iterations=args.iterations, seed=args.seed, eval_every=0)
    task = style_task(seed=cfg.seed)
    trainer = StyleTrainer(cfg, task)
    trainer.run()
    nll = trainer.heldout_nll()
    print(f"transfer accuracy {trainer.transfer_accuracy():.3f}, "
          f"reconstruction NLL {nll[0]:.3f} / {nll[1]:.3f}")
    vocab = task.test[0].vocab
    src = task.test[0].sequences[:args.show]
    for a, b in zip(src, trainer.model.transfer_hard(src, 0, 1)):
        print(f"  style 1: {decode(vocab, a)}\n  style 2: {decode(vocab, b)}\n")


def run_cipher(args):
    # frozen embeddings and a pure FMD critic; see README for why
    cfg = CipherConfig(iterations=args.iterations, seed=args.seed, eval_every=0, lam=20.0,
                       embedding_owner="frozen", critic_cycle=False)
    task = cipher_task(seed=cfg.seed)
    trainer = CipherTrainer(cfg, task)
    trainer.run()
    print(f"word-mapping accuracy {trainer.accuracy():.3f} (chance 0.05)")
    vocab = task.plain_test.vocab
    cipher = task.cipher_test.sequences[:args.show]
    for c, g, p in zip(cipher, trainer.model.map_hard(cipher, "g2"), task.plain_test.sequences):
        print(f"  cipher:     {decode(vocab, c)}\n  deciphered: {decode(vocab, g)}\n"
              f"  plaintext:  {decode(vocab, p)}\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("task", choices=("style", "cipher"))
    ap.add_argument("--iterations", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--show", type=int, default=3)
    args = ap.parse_args()
    (run_style if args.task == "style" else run_cipher)(args)


if __name__ == "__main__":
    main()
