#!/usr/bin/env python3
"""Train the loss-branch and tail-layer ablations under identical seeds and
compare held-out matching accuracy."""

import argparse

from salientfeat.evaluation import evaluate_mma3, make_eval_pairs
from salientfeat.synth import synthetic_corpus
from salientfeat.training import TrainConfig, train

VARIANTS = {
    "full": {},
    "no_style": {"no_style": "1"},
    "no_structure": {"no_structure": "1"},
    "no_both": {"no_style": "1", "no_structure": "1"},
    "no_dsc": {"no_dsc": "1"},
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--budget", type=int, default=128)
    parser.add_argument("--pairs", type=int, default=20)
    args = parser.parse_args()

    base = TrainConfig.from_overrides({"seed": str(args.seed)},
                                      base=TrainConfig.desk())
    if args.steps is not None:
        base = TrainConfig.from_overrides({"steps": str(args.steps)}, base=base)
    corpus = synthetic_corpus(24, base.crop + 24, seed=args.seed + 100)
    held_out = make_eval_pairs(args.pairs, base.crop, seed=args.seed + 300)

    print(f"{'variant':<14}{'MMA@3':>8}{'final loss':>12}")
    for name, overrides in VARIANTS.items():
        config = TrainConfig.from_overrides(overrides, base=base)
        net, log = train(config, corpus)
        score = evaluate_mma3(net, held_out, args.budget)
        print(f"{name:<14}{score:>8.3f}{log.entries[-1].total:>12.3f}")


if __name__ == "__main__":
    main()
