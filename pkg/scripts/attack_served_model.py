"""Interface attack against a live scoring endpoint.

One cohort's model is deployed behind HTTP with rounded, display-mapped
scores. The attacker only sees the wire: it inverts the public display
calibration, recovers the canonical coefficients by finite differences on
the logit, and matches them against a locally trained shadow farm to name
the training cohort.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ttshield.experiment import (
    DisplayedModel,
    ExperimentConfig,
    display_calibration,
    make_cohorts,
    power_display,
    recovered_wb_corpus,
)
from ttshield.predictors import lr_train
from ttshield.privacy import (
    TargetSpec,
    adversary_predict,
    adversary_train,
    invert_monotone_map,
    recover_lr_via_endpoint,
    train_shadow_models,
)
from ttshield.seeds import child_seed
from ttshield.serve import ModelServer, endpoint_client


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--secret", type=int, default=1, help="0-based index of the deployed cohort")
    ap.add_argument("--decimals", type=int, default=2)
    ap.add_argument("--gamma", type=float, default=1.6, help="display map exponent")
    ap.add_argument("--R", type=int, default=20)
    args = ap.parse_args()

    config = ExperimentConfig.from_dict({"seed": args.seed, "R": args.R})
    cohorts = make_cohorts(config)
    secret = cohorts[args.secret]
    target = lr_train(secret.X, secret.y, config.lr_grid[0], seed=child_seed(args.seed, "target"))

    display = power_display(args.gamma)
    served = DisplayedModel(target, display)
    calibration = display_calibration(display, n=201)

    with ModelServer(served, decimals=args.decimals) as server:
        print(f"endpoint up at {server.url}, decimals={args.decimals}, gamma={args.gamma}")
        client = endpoint_client(server.url)

        def probability_query(params):
            score, clamped = invert_monotone_map(calibration, client(params))
            return score

        recovered = recover_lr_via_endpoint(probability_query, clamp=1e-3)
        queries = server.request_counts["predict"]
    print(f"recovered 21 canonical coefficients with {queries} queries")

    # shadow side: run the identical extraction on locally trained models
    models, failures = train_shadow_models(
        cohorts,
        tuple(TargetSpec("lr", h) for h in config.lr_grid),
        R=config.R,
        seed=child_seed(args.seed, "farm"),
        max_union_size=1,
    )
    corpus = recovered_wb_corpus(models, display, args.decimals)
    adv = adversary_train(
        corpus.features, corpus.labels, seed=child_seed(args.seed, "adversary")
    )
    probs = adversary_predict(adv, recovered[None, :])[0]
    top = int(np.argmax(probs))

    for i, cohort in enumerate(cohorts):
        marker = " <- predicted" if i == top else ""
        print(f"  p({cohort.name}) = {probs[i]:.3f}{marker}")
    print(f"true cohort: {secret.name}")
    print("attack " + ("succeeded" if top == args.secret else "failed"))
    return 0 if top == args.secret else 1


if __name__ == "__main__":
    sys.exit(main())
