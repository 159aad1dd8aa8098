"""Train the FMD text GAN on the built-in Markov toy corpus and report sample quality.

    python3 demos/toy_generation.py --iterations 200
"""
import argparse

from fmgan.textdata import decode
from fmgan.train import TrainConfig, Trainer, generation_report, toy_corpora


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples", type=int, default=5, help="sentences to print")
    args = ap.parse_args()

    cfg = TrainConfig(iterations=args.iterations, seed=args.seed, eval_every=0)
    train, test = toy_corpora(L=cfg.seq_len, seed=cfg.seed)
    trainer = Trainer(cfg, train, test)
    print("untrained:", {k: round(v, 4) for k, v in generation_report(trainer).items()})
    trainer.run()
    held = trainer.history.phase("heldout")
    print(f"held-out FMD: {held[0].fmd:.4f} at iteration {held[0].iter}, "
          f"{held[-1].fmd:.4f} at iteration {held[-1].iter}")
    print("trained:  ", {k: round(v, 4) for k, v in generation_report(trainer).items()})
    for row in trainer.sample()[:args.samples]:
        print("  ", decode(train.vocab, row))


if __name__ == "__main__":
    main()
