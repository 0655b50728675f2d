#!/usr/bin/env python3
"""Train every reranker on one synthetic corpus and print an NDCG/MAP table.

Mirrors the directional comparison in the acceptance suite: pointwise,
submodular (MMR), DPP greedy MAP, the one-pass attention reranker, and the
full sequential model, all evaluated on the same held-out split.
"""

import argparse
import sys

from divnet import baselines
from divnet.data import SyntheticConfig, generate_synthetic, split
from divnet.metrics import evaluate
from divnet.model import ModelConfig, decode_slate
from divnet.training import TrainConfig, train


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--num-queries", type=int, default=500)
    ap.add_argument("--num-items", type=int, default=8)
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gamma", type=float, default=0.5)
    args = ap.parse_args(argv)

    syn_cfg = SyntheticConfig(num_items=args.num_items, seed=args.seed)
    instances, _ = generate_synthetic(syn_cfg, args.num_queries)
    train_set, val_set, test_set = split(instances, seed=args.seed)
    feature_width = syn_cfg.feature_width
    model_cfg = ModelConfig(item_dim=feature_width, user_dim=0, d_k=16, d_v=16)

    scorer = baselines.train_pointwise(train_set, feature_width,
                                       epochs=args.epochs, seed=args.seed)
    prm_params = baselines.train_prm(train_set, model_cfg, epochs=args.epochs,
                                     seed=args.seed)
    train_cfg = TrainConfig(alpha=0.1, lam=0.5, batch_size=32,
                            samples_per_instance=2, seed=args.seed,
                            max_epochs=args.epochs, patience=args.epochs)
    state = train(train_set, train_cfg, model_cfg=model_cfg,
                  val_instances=val_set)
    divnet_params = state.best_params

    rankers = {
        "pointwise": lambda i: baselines.pointwise_rank(i, scorer),
        "submodular": lambda i: baselines.submodular_greedy(
            i, scorer.scores(i), args.gamma),
        "dpp": lambda i: baselines.dpp_greedy(i, scorer.scores(i)),
        "prm": lambda i: baselines.prm_rank(i, prm_params),
        "divnet": lambda i: decode_slate(i, divnet_params, alpha=0.1,
                                         mode="greedy").permutation,
    }
    print(f"{'method':<12}{'ndcg@5':>8}{'ndcg@10':>9}{'map@10':>8}{'ild@5':>8}")
    for name, fn in rankers.items():
        rep = evaluate(fn, test_set, cutoffs=(5, 10))
        print(f"{name:<12}{rep.get('ndcg', 5):>8.4f}{rep.get('ndcg', 10):>9.4f}"
              f"{rep.get('map', 10):>8.4f}{rep.get('ild', 5):>8.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
